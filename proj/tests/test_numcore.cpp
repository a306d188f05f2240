#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <functional>
#include <vector>

#include "snpx/kernels.hpp"
#include "snpx/nn.hpp"
#include "snpx/params.hpp"
#include "snpx/rng.hpp"
#include "snpx/tape.hpp"
#include "snpx/tensor.hpp"

using namespace snpx;

namespace {

// Central finite differences with h = 1e-3 against the analytic gradient.
// A coordinate passes on absolute agreement (covers near-zero gradients,
// where float32 forward noise swamps any relative measure) or on relative
// agreement below 1e-3.
constexpr float kFdStep = 1e-3f;

bool grad_close(double fd, double an) {
  const double diff = std::abs(fd - an);
  if (diff < 2e-4) return true;
  return diff / std::max({std::abs(fd), std::abs(an), 1e-12}) < 1e-3;
}

// Checks `samples` random coordinates of `x` (all when samples <= 0).
void fd_check(const std::function<float()>& loss, Tensor& x, const Tensor& analytic,
              Rng& rng, int samples, const char* what) {
  REQUIRE(x.same_shape(analytic));
  const int n = static_cast<int>(x.size());
  std::vector<int> idx;
  if (samples <= 0 || samples >= n) {
    for (int i = 0; i < n; ++i) idx.push_back(i);
  } else {
    for (int s = 0; s < samples; ++s) idx.push_back(rng.uniform_int(n));
  }
  for (int i : idx) {
    const float keep = x[i];
    x[i] = keep + kFdStep;
    const double fp = loss();
    x[i] = keep - kFdStep;
    const double fm = loss();
    x[i] = keep;
    const double fd = (fp - fm) / (2.0 * static_cast<double>(kFdStep));
    INFO(what << " coord " << i << ": fd=" << fd << " analytic=" << analytic[i]);
    CHECK(grad_close(fd, analytic[i]));
  }
}

Tensor random_tensor(std::vector<int> shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

bool bits_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("rng determinism and ranges") {
  Rng a = Rng::substream(42, "test");
  Rng b = Rng::substream(42, "test");
  for (int i = 0; i < 1000; ++i) {
    const float u = a.uniform();
    CHECK(u == b.uniform());
    CHECK(u >= 0.0f);
    CHECK(u < 1.0f);
  }
  // Different component tags must give unrelated streams.
  Rng c = Rng::substream(42, "test");
  Rng d = Rng::substream(42, "other");
  int same = 0;
  for (int i = 0; i < 100; ++i) {
    if (c.next_u64() == d.next_u64()) ++same;
  }
  CHECK(same == 0);
  // Index separates substreams with the same tag.
  CHECK(Rng::mix(7, "x", 0) != Rng::mix(7, "x", 1));

  Rng e = Rng::substream(1, "int");
  for (int i = 0; i < 1000; ++i) {
    const int v = e.uniform_int(7);
    CHECK(v >= 0);
    CHECK(v < 7);
  }
  Rng f = Rng::substream(3, "norm");
  double mean = 0.0, var = 0.0;
  const int kN = 20000;
  for (int i = 0; i < kN; ++i) {
    const float z = f.normal();
    CHECK(std::isfinite(z));
    mean += z;
    var += static_cast<double>(z) * z;
  }
  mean /= kN;
  var = var / kN - mean * mean;
  CHECK(std::abs(mean) < 0.03);
  CHECK(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("tensor shape and indexing") {
  CHECK(shape_numel({4, 20, 20}) == 1600);
  CHECK_THROWS_AS(Tensor({0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f, 3.0f}), std::invalid_argument);

  Tensor t({2, 3});
  t.at(1, 2) = 5.0f;
  CHECK(t[1 * 3 + 2] == 5.0f);
  Tensor u({2, 3, 4});
  u.at(1, 2, 3) = 7.0f;
  CHECK(u[(1 * 3 + 2) * 4 + 3] == 7.0f);

  Tensor v({2});
  v[0] = std::numeric_limits<float>::infinity();
  CHECK(!v.all_finite());
  CHECK_THROWS_AS(v.check_finite("v"), std::runtime_error);
}

TEST_CASE("conv output geometry") {
  // The 20x20 stack with an 8-filter 4x4 stride-2 bank lands on 9x9.
  CHECK(kernels::conv_out_dim(20, 4, 2, 0) == 9);
  CHECK(kernels::conv_out_dim(9, 3, 1, 0) == 7);
  CHECK(kernels::conv_out_dim(20, 3, 1, 1) == 20);
  CHECK(kernels::conv_out_dim(10, 3, 1, 1) == 10);
  CHECK_THROWS_AS(kernels::conv_out_dim(3, 5, 1, 0), std::invalid_argument);
}

TEST_CASE("serial and parallel kernels agree bit for bit") {
  Rng rng = Rng::substream(11, "kernels");

  struct DenseCfg {
    int in, out;
  };
  for (DenseCfg cfg : {DenseCfg{648, 128}, DenseCfg{784, 128}, DenseCfg{5, 3}, DenseCfg{96, 1}}) {
    const Tensor x = random_tensor({cfg.in}, rng);
    const Tensor w = random_tensor({cfg.out, cfg.in}, rng);
    const Tensor b = random_tensor({cfg.out}, rng);
    const Tensor dy = random_tensor({cfg.out}, rng);
    Tensor y1({cfg.out}), y2({cfg.out});
    kernels::dense_forward(x.data(), w.data(), b.data(), y1.data(), cfg.in, cfg.out);
    kernels::serial::dense_forward(x.data(), w.data(), b.data(), y2.data(), cfg.in, cfg.out);
    CHECK(bits_equal(y1, y2));

    Tensor dx1({cfg.in}), dx2({cfg.in});
    kernels::dense_backward_input(w.data(), dy.data(), dx1.data(), cfg.in, cfg.out);
    kernels::serial::dense_backward_input(w.data(), dy.data(), dx2.data(), cfg.in, cfg.out);
    CHECK(bits_equal(dx1, dx2));

    Tensor dw1(w.shape()), dw2(w.shape()), db1({cfg.out}), db2({cfg.out});
    kernels::dense_backward_params(x.data(), dy.data(), dw1.data(), db1.data(), cfg.in, cfg.out);
    kernels::serial::dense_backward_params(x.data(), dy.data(), dw2.data(), db2.data(), cfg.in,
                                           cfg.out);
    CHECK(bits_equal(dw1, dw2));
    CHECK(bits_equal(db1, db2));
  }

  struct ConvCfg {
    int cin, h, w, cout, k, stride, pad;
  };
  for (ConvCfg c : {ConvCfg{4, 20, 20, 8, 4, 2, 0}, ConvCfg{8, 9, 9, 16, 3, 1, 0},
                    ConvCfg{8, 20, 20, 1, 3, 1, 1}, ConvCfg{2, 7, 5, 3, 3, 2, 1}}) {
    const int ho = kernels::conv_out_dim(c.h, c.k, c.stride, c.pad);
    const int wo = kernels::conv_out_dim(c.w, c.k, c.stride, c.pad);
    const Tensor x = random_tensor({c.cin, c.h, c.w}, rng);
    const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    const Tensor b = random_tensor({c.cout}, rng);
    const Tensor dy = random_tensor({c.cout, ho, wo}, rng);

    Tensor y1({c.cout, ho, wo}), y2({c.cout, ho, wo});
    kernels::conv2d_forward(x.data(), w.data(), b.data(), y1.data(), c.cin, c.h, c.w, c.cout, c.k,
                            c.stride, c.pad);
    kernels::serial::conv2d_forward(x.data(), w.data(), b.data(), y2.data(), c.cin, c.h, c.w,
                                    c.cout, c.k, c.stride, c.pad);
    CHECK(bits_equal(y1, y2));

    Tensor dx1(x.shape()), dx2(x.shape());
    kernels::conv2d_backward_input(w.data(), dy.data(), dx1.data(), c.cin, c.h, c.w, c.cout, c.k,
                                   c.stride, c.pad);
    kernels::serial::conv2d_backward_input(w.data(), dy.data(), dx2.data(), c.cin, c.h, c.w,
                                           c.cout, c.k, c.stride, c.pad);
    CHECK(bits_equal(dx1, dx2));

    Tensor dw1(w.shape()), dw2(w.shape()), db1({c.cout}), db2({c.cout});
    kernels::conv2d_backward_params(x.data(), dy.data(), dw1.data(), db1.data(), c.cin, c.h, c.w,
                                    c.cout, c.k, c.stride, c.pad);
    kernels::serial::conv2d_backward_params(x.data(), dy.data(), dw2.data(), db2.data(), c.cin,
                                            c.h, c.w, c.cout, c.k, c.stride, c.pad);
    CHECK(bits_equal(dw1, dw2));
    CHECK(bits_equal(db1, db2));
  }
}

TEST_CASE("backward kernels accumulate rather than overwrite") {
  Rng rng = Rng::substream(12, "accum");
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor dy = random_tensor({3}, rng);
  Tensor once({4}), twice({4});
  kernels::dense_backward_input(w.data(), dy.data(), once.data(), 4, 3);
  kernels::dense_backward_input(w.data(), dy.data(), twice.data(), 4, 3);
  kernels::dense_backward_input(w.data(), dy.data(), twice.data(), 4, 3);
  for (int i = 0; i < 4; ++i) CHECK(twice[i] == doctest::Approx(2.0f * once[i]));
}

TEST_CASE("finite differences: dense") {
  Rng rng = Rng::substream(21, "fd-dense");
  Tensor x = random_tensor({6}, rng);
  Tensor w = random_tensor({4, 6}, rng);
  Tensor b = random_tensor({4}, rng);
  Tensor target = random_tensor({4}, rng);

  auto loss = [&]() {
    Tape t;
    const int y = t.dense(t.input(x), t.input(w), t.input(b));
    return t.value(t.l2_loss(y, t.input(target)))[0];
  };
  Tape t;
  const int xi = t.input(x), wi = t.input(w), bi = t.input(b);
  t.backward(t.l2_loss(t.dense(xi, wi, bi), t.input(target)));
  fd_check(loss, x, t.grad(xi), rng, 0, "dense/x");
  fd_check(loss, w, t.grad(wi), rng, 0, "dense/w");
  fd_check(loss, b, t.grad(bi), rng, 0, "dense/b");
}

TEST_CASE("conv2d gradients match a double-precision scatter reference") {
  // Stronger than finite differences: the whole backward pass re-derived
  // from the forward definition, accumulated in double.
  Rng rng = Rng::substream(31, "conv-ref");
  struct Cfg {
    int cin, h, w, cout, k, stride, pad;
  };
  for (Cfg c : {Cfg{4, 20, 20, 8, 4, 2, 0}, Cfg{8, 9, 9, 16, 3, 1, 0},
                Cfg{2, 6, 6, 2, 3, 1, 1}, Cfg{3, 9, 7, 2, 4, 2, 1}}) {
    const int ho = kernels::conv_out_dim(c.h, c.k, c.stride, c.pad);
    const int wo = kernels::conv_out_dim(c.w, c.k, c.stride, c.pad);
    const Tensor x = random_tensor({c.cin, c.h, c.w}, rng);
    const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, rng);
    const Tensor b = random_tensor({c.cout}, rng);
    const Tensor dy = random_tensor({c.cout, ho, wo}, rng);

    Tensor y({c.cout, ho, wo}), dx(x.shape()), dw(w.shape()), db({c.cout});
    kernels::conv2d_forward(x.data(), w.data(), b.data(), y.data(), c.cin, c.h, c.w,
                            c.cout, c.k, c.stride, c.pad);
    kernels::conv2d_backward_input(w.data(), dy.data(), dx.data(), c.cin, c.h, c.w,
                                   c.cout, c.k, c.stride, c.pad);
    kernels::conv2d_backward_params(x.data(), dy.data(), dw.data(), db.data(), c.cin,
                                    c.h, c.w, c.cout, c.k, c.stride, c.pad);

    std::vector<double> yr(static_cast<size_t>(y.size()), 0.0);
    std::vector<double> dxr(static_cast<size_t>(x.size()), 0.0);
    std::vector<double> dwr(static_cast<size_t>(w.size()), 0.0);
    std::vector<double> dbr(static_cast<size_t>(c.cout), 0.0);
    for (int co = 0; co < c.cout; ++co) {
      for (int oh = 0; oh < ho; ++oh) {
        for (int ow = 0; ow < wo; ++ow) {
          double acc = b[co];
          const double g = dy.at(co, oh, ow);
          dbr[co] += g;
          for (int ci = 0; ci < c.cin; ++ci) {
            for (int kh = 0; kh < c.k; ++kh) {
              for (int kw = 0; kw < c.k; ++kw) {
                const int ih = oh * c.stride - c.pad + kh;
                const int iw = ow * c.stride - c.pad + kw;
                if (ih < 0 || ih >= c.h || iw < 0 || iw >= c.w) continue;
                const int wi = ((co * c.cin + ci) * c.k + kh) * c.k + kw;
                acc += static_cast<double>(x.at(ci, ih, iw)) * w[wi];
                dxr[static_cast<size_t>((ci * c.h + ih) * c.w + iw)] += g * w[wi];
                dwr[static_cast<size_t>(wi)] += g * x.at(ci, ih, iw);
              }
            }
          }
          yr[static_cast<size_t>((co * ho + oh) * wo + ow)] = acc;
        }
      }
    }
    for (int64_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(yr[i]).epsilon(1e-4));
    for (int64_t i = 0; i < dx.size(); ++i)
      CHECK(dx[i] == doctest::Approx(dxr[i]).epsilon(1e-4));
    for (int64_t i = 0; i < dw.size(); ++i)
      CHECK(dw[i] == doctest::Approx(dwr[i]).epsilon(1e-4));
    for (int i = 0; i < c.cout; ++i) CHECK(db[i] == doctest::Approx(dbr[i]).epsilon(1e-4));
  }
}

TEST_CASE("finite differences: conv2d with stride and padding") {
  Rng rng = Rng::substream(22, "fd-conv");
  struct Cfg {
    int cin, h, w, cout, k, stride, pad;
  };
  for (Cfg c : {Cfg{2, 8, 8, 3, 4, 2, 0}, Cfg{2, 6, 6, 2, 3, 1, 1}}) {
    // Modest magnitudes keep the f32 forward noise well under the check's
    // absolute floor.
    Tensor x = random_tensor({c.cin, c.h, c.w}, rng, -0.5f, 0.5f);
    Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, rng, -0.5f, 0.5f);
    Tensor b = random_tensor({c.cout}, rng, -0.5f, 0.5f);
    const int ho = kernels::conv_out_dim(c.h, c.k, c.stride, c.pad);
    const int wo = kernels::conv_out_dim(c.w, c.k, c.stride, c.pad);
    Tensor target = random_tensor({c.cout, ho, wo}, rng, -0.5f, 0.5f);

    auto loss = [&]() {
      Tape t;
      const int y = t.conv2d(t.input(x), t.input(w), t.input(b), c.stride, c.pad);
      return t.value(t.l2_loss(y, t.input(target)))[0];
    };
    Tape t;
    const int xi = t.input(x), wi = t.input(w), bi = t.input(b);
    t.backward(t.l2_loss(t.conv2d(xi, wi, bi, c.stride, c.pad), t.input(target)));
    fd_check(loss, x, t.grad(xi), rng, 40, "conv/x");
    fd_check(loss, w, t.grad(wi), rng, 40, "conv/w");
    fd_check(loss, b, t.grad(bi), rng, 0, "conv/b");
  }
}

TEST_CASE("finite differences: relu, softmax, upsample, concat, pick, add, scale") {
  Rng rng = Rng::substream(23, "fd-elem");

  // ReLU: keep inputs off the kink at 0.
  Tensor x({8});
  for (int i = 0; i < 8; ++i) x[i] = (i % 2 == 0 ? 1.0f : -1.0f) * rng.uniform(0.2f, 1.0f);
  Tensor tgt = random_tensor({8}, rng);
  {
    auto loss = [&]() {
      Tape t;
      return t.value(t.l2_loss(t.relu(t.input(x)), t.input(tgt)))[0];
    };
    Tape t;
    const int xi = t.input(x);
    t.backward(t.l2_loss(t.relu(xi), t.input(tgt)));
    fd_check(loss, x, t.grad(xi), rng, 0, "relu/x");
  }

  Tensor z = random_tensor({5}, rng);
  Tensor ztgt = random_tensor({5}, rng, 0.0f, 1.0f);
  {
    auto loss = [&]() {
      Tape t;
      return t.value(t.l2_loss(t.softmax(t.input(z)), t.input(ztgt)))[0];
    };
    Tape t;
    const int zi = t.input(z);
    t.backward(t.l2_loss(t.softmax(zi), t.input(ztgt)));
    fd_check(loss, z, t.grad(zi), rng, 0, "softmax/z");
  }

  Tensor img = random_tensor({2, 3, 3}, rng);
  Tensor up_tgt = random_tensor({2, 6, 6}, rng);
  {
    auto loss = [&]() {
      Tape t;
      return t.value(t.l2_loss(t.upsample2x(t.input(img)), t.input(up_tgt)))[0];
    };
    Tape t;
    const int ii = t.input(img);
    t.backward(t.l2_loss(t.upsample2x(ii), t.input(up_tgt)));
    fd_check(loss, img, t.grad(ii), rng, 0, "upsample/x");
  }

  Tensor a = random_tensor({3}, rng), c = random_tensor({4}, rng);
  {
    auto loss = [&]() {
      Tape t;
      const int j = t.concat(t.input(a), t.input(c));
      return t.value(t.scale(t.pick(j, 5), 2.5f))[0];
    };
    Tape t;
    const int ai = t.input(a), ci = t.input(c);
    t.backward(t.scale(t.pick(t.concat(ai, ci), 5), 2.5f));
    fd_check(loss, a, t.grad(ai), rng, 0, "concat/a");
    fd_check(loss, c, t.grad(ci), rng, 0, "concat/c");
  }

  Tensor p = random_tensor({4}, rng), q = random_tensor({4}, rng);
  Tensor sum_tgt = random_tensor({4}, rng);
  {
    auto loss = [&]() {
      Tape t;
      return t.value(t.l2_loss(t.add(t.input(p), t.input(q)), t.input(sum_tgt)))[0];
    };
    Tape t;
    const int pi = t.input(p), qi = t.input(q);
    t.backward(t.l2_loss(t.add(pi, qi), t.input(sum_tgt)));
    fd_check(loss, p, t.grad(pi), rng, 0, "add/p");
    fd_check(loss, q, t.grad(qi), rng, 0, "add/q");
  }
}

TEST_CASE("finite differences and hand values: losses") {
  Rng rng = Rng::substream(24, "fd-loss");

  // Cross entropy against a hand-computed double-precision value.
  {
    Tensor z({3}, {1.0f, 2.0f, 3.0f});
    Tensor t1 = one_hot(0, 3);
    Tape t;
    const int zi = t.input(z);
    const int l = t.cross_entropy(zi, t.input(t1));
    const double lse = 3.0 + std::log(1.0 + std::exp(-1.0) + std::exp(-2.0));
    CHECK(t.value(l)[0] == doctest::Approx(lse - 1.0).epsilon(1e-5));
    t.backward(l);
    auto loss = [&]() {
      Tape tt;
      return tt.value(tt.cross_entropy(tt.input(z), tt.input(t1)))[0];
    };
    fd_check(loss, z, t.grad(zi), rng, 0, "ce/z");
  }

  // Huber: quadratic inside delta, linear outside.
  {
    Tensor pred({2}, {0.5f, 3.0f});
    Tensor tgt({2}, {0.0f, 1.0f});
    Tape t;
    const int l = t.huber(t.input(pred), t.input(tgt), 1.0f);
    // mean( 0.5*0.25, 1*(2-0.5) ) = (0.125 + 1.5) / 2
    CHECK(t.value(l)[0] == doctest::Approx((0.125 + 1.5) / 2.0).epsilon(1e-6));

    Tensor p2 = random_tensor({6}, rng, -3.0f, 3.0f);
    Tensor t2 = random_tensor({6}, rng, -0.5f, 0.5f);
    auto loss = [&]() {
      Tape tt;
      return tt.value(tt.huber(tt.input(p2), tt.input(t2), 1.0f))[0];
    };
    Tape tb;
    const int pi = tb.input(p2), ti = tb.input(t2);
    tb.backward(tb.huber(pi, ti, 1.0f));
    fd_check(loss, p2, tb.grad(pi), rng, 0, "huber/pred");
    fd_check(loss, t2, tb.grad(ti), rng, 0, "huber/target");
  }

  // Half mean squared error.
  {
    Tensor a({2}, {1.0f, 2.0f});
    Tensor b({2}, {0.0f, 0.0f});
    Tape t;
    CHECK(t.value(t.l2_loss(t.input(a), t.input(b)))[0] ==
          doctest::Approx(0.5 * (1.0 + 4.0) / 2.0).epsilon(1e-6));
  }
}

TEST_CASE("finite differences: clipped policy objective and entropy") {
  Rng rng = Rng::substream(25, "fd-ppo");

  // Unclipped branch: ratio near 1, gradient should flow.
  {
    Tensor z({3}, {0.4f, -0.3f, 0.1f});
    const float old_logp = log_prob_of(z, 1);  // ratio == 1 at the start point
    auto loss = [&]() {
      Tape t;
      return t.value(t.ppo_clip(t.input(z), 1, old_logp, 0.7f, 0.2f))[0];
    };
    Tape t;
    const int zi = t.input(z);
    t.backward(t.ppo_clip(zi, 1, old_logp, 0.7f, 0.2f));
    fd_check(loss, z, t.grad(zi), rng, 0, "ppo-unclipped/z");
  }

  // Saturated branch: ratio far above 1 + alpha with positive advantage
  // gives a flat objective and a zero gradient.
  {
    Tensor z({3}, {2.0f, -1.0f, 0.0f});
    const float old_logp = log_prob_of(z, 0) - 1.0f;  // ratio = e
    Tape t;
    const int zi = t.input(z);
    const int l = t.ppo_clip(zi, 0, old_logp, 0.5f, 0.2f);
    CHECK(t.value(l)[0] == doctest::Approx(-1.2 * 0.5).epsilon(1e-4));
    t.backward(l);
    for (int i = 0; i < 3; ++i) CHECK(t.grad(zi)[i] == 0.0f);
  }

  {
    Tensor z = random_tensor({4}, rng);
    auto loss = [&]() {
      Tape t;
      return t.value(t.entropy(t.input(z)))[0];
    };
    Tape t;
    const int zi = t.input(z);
    t.backward(t.entropy(zi));
    fd_check(loss, z, t.grad(zi), rng, 0, "entropy/z");
  }
}

TEST_CASE("finite differences: full networks") {
  // Small instances of the real architectures: same code path, but little
  // enough f32 accumulation noise for central differences to be meaningful.
  Rng rng = Rng::substream(26, "fd-nets");
  const std::vector<int> obs = {2, 8, 8};

  // Q-network with the TD-style pick + huber loss.
  {
    QNetwork net(obs, 3, 901);
    Tensor state = random_tensor(obs, rng, 0.0f, 1.0f);
    Tensor target({1}, {0.37f});
    auto loss = [&]() {
      Tape t;
      ParamBinder bind(t, net.params());
      const int q = net.forward(t, t.input(state), bind);
      return t.value(t.huber(t.pick(q, 2), t.input(target), 1.0f))[0];
    };
    Tape t;
    ParamBinder bind(t, net.params());
    const int si = t.input(state);
    const int q = net.forward(t, si, bind);
    t.backward(t.huber(t.pick(q, 2), t.input(target), 1.0f));
    net.params().zero_grads();
    bind.accumulate(net.params());
    for (const char* name : {"conv1.w", "conv2.w", "fc1.w", "head.w", "head.b"}) {
      fd_check(loss, net.params().at(name).value, net.params().at(name).grad, rng, 12, name);
    }
    fd_check(loss, state, t.grad(si), rng, 20, "qnet/input");
  }

  // Policy/value network with the combined actor-critic objective.
  {
    PolicyValueNetwork net(obs, 3, 902);
    Tensor state = random_tensor(obs, rng, 0.0f, 1.0f);
    Tensor ret({1}, {0.8f});
    const float old_logp = log_prob_of(net.policy_logits(state), 1) + 0.05f;
    auto loss = [&]() {
      Tape t;
      ParamBinder bind(t, net.params());
      const auto heads = net.forward(t, t.input(state), bind);
      const int surr = t.ppo_clip(heads.logits, 1, old_logp, 0.6f, 0.2f);
      const int vloss = t.scale(t.huber(heads.value, t.input(ret), 1.0f), 0.5f);
      const int ent = t.scale(t.entropy(heads.logits), -0.01f);
      return t.value(t.add(t.add(surr, vloss), ent))[0];
    };
    Tape t;
    ParamBinder bind(t, net.params());
    const int si = t.input(state);
    const auto heads = net.forward(t, si, bind);
    const int surr = t.ppo_clip(heads.logits, 1, old_logp, 0.6f, 0.2f);
    const int vloss = t.scale(t.huber(heads.value, t.input(ret), 1.0f), 0.5f);
    const int ent = t.scale(t.entropy(heads.logits), -0.01f);
    t.backward(t.add(t.add(surr, vloss), ent));
    net.params().zero_grads();
    bind.accumulate(net.params());
    for (const char* name : {"conv1.w", "fc1.w", "pi.w", "v.w"}) {
      fd_check(loss, net.params().at(name).value, net.params().at(name).grad, rng, 12, name);
    }
    fd_check(loss, state, t.grad(si), rng, 20, "pvnet/input");
  }

  // Eavesdropper classifier with cross entropy.
  {
    ProxyNet net(obs, 3, 903);
    Tensor state = random_tensor(obs, rng, 0.0f, 1.0f);
    Tensor label = one_hot(1, 3);
    auto loss = [&]() {
      Tape t;
      ParamBinder bind(t, net.params());
      const int out = net.forward(t, t.input(state), bind);
      return t.value(t.cross_entropy(out, t.input(label)))[0];
    };
    Tape t;
    ParamBinder bind(t, net.params());
    const int si = t.input(state);
    t.backward(t.cross_entropy(net.forward(t, si, bind), t.input(label)));
    net.params().zero_grads();
    bind.accumulate(net.params());
    for (const char* name : {"conv1.w", "fc1.w", "head.w"}) {
      fd_check(loss, net.params().at(name).value, net.params().at(name).grad, rng, 12, name);
    }
    fd_check(loss, state, t.grad(si), rng, 20, "proxy/input");
  }

  // Frame predictor, action-conditional variant.
  {
    PsychicNet net(obs, 3, 904);
    Tensor state = random_tensor(obs, rng, 0.0f, 1.0f);
    Tensor next = random_tensor({1, 8, 8}, rng, 0.0f, 1.0f);
    auto loss = [&]() {
      Tape t;
      ParamBinder bind(t, net.params());
      const int out = net.forward(t, t.input(state), bind, 2);
      return t.value(t.l2_loss(out, t.input(next)))[0];
    };
    Tape t;
    ParamBinder bind(t, net.params());
    const int si = t.input(state);
    t.backward(t.l2_loss(net.forward(t, si, bind, 2), t.input(next)));
    net.params().zero_grads();
    bind.accumulate(net.params());
    for (const char* name : {"conv1.w", "fc1.w", "dec_fc.w", "dec_conv.w"}) {
      fd_check(loss, net.params().at(name).value, net.params().at(name).grad, rng, 12, name);
    }
    fd_check(loss, state, t.grad(si), rng, 20, "psychic/input");
  }
}

TEST_CASE("tape misuse is rejected") {
  Tape t;
  Tensor x({2}, {1.0f, 2.0f});
  const int xi = t.input(x);
  CHECK_THROWS_AS(t.dense(xi, xi, xi), std::invalid_argument);
  CHECK_THROWS_AS(t.pick(xi, 5), std::invalid_argument);
  CHECK_THROWS_AS(t.value(99), std::invalid_argument);

  const int l = t.pick(xi, 0);
  t.backward(l);
  CHECK_THROWS_AS(t.backward(l), std::runtime_error);

  Tape t2;
  const int a = t2.input(Tensor({2}, {1.0f, 0.5f}));
  CHECK_THROWS_AS(t2.backward(a), std::invalid_argument);  // non-scalar loss

  Tape t3;
  Tensor bad_target({2}, {0.5f, 0.9f});  // does not sum to 1
  const int zi = t3.input(Tensor({2}, {0.0f, 1.0f}));
  CHECK_THROWS_AS(t3.cross_entropy(zi, t3.input(bad_target)), std::invalid_argument);
}

TEST_CASE("adam single step matches a hand computation") {
  ParamStore store;
  Tensor& w = store.add("w", {1});
  w[0] = 1.0f;
  store.at("w").grad[0] = 0.5f;
  store.adam_step(0.1f);
  // m = 0.05, v = 0.00025; bias-corrected: mhat = 0.5, vhat = 0.25.
  const double expect = 1.0 - 0.1 * 0.5 / (std::sqrt(0.25) + 1e-8);
  CHECK(w[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(store.step_count() == 1);

  // Second step with a fresh gradient, checked against a double-precision
  // replica of the update rule.
  store.at("w").grad[0] = -0.2f;
  double m = 0.05, v = 0.00025, val = expect;
  m = 0.9 * m + 0.1 * -0.2;
  v = 0.999 * v + 0.001 * 0.04;
  val -= 0.1 * (m / (1.0 - std::pow(0.9, 2))) / (std::sqrt(v / (1.0 - std::pow(0.999, 2))) + 1e-8);
  store.adam_step(0.1f);
  CHECK(w[0] == doctest::Approx(val).epsilon(1e-5));
}

TEST_CASE("param store init, copy, and binder accumulation") {
  const std::vector<int> obs = {4, 20, 20};
  QNetwork a(obs, 3, 77), b(obs, 3, 77), c(obs, 3, 78);
  // Same seed gives identical weights; another seed differs.
  CHECK(bits_equal(a.params().at("fc1.w").value, b.params().at("fc1.w").value));
  CHECK(!bits_equal(a.params().at("fc1.w").value, c.params().at("fc1.w").value));

  // Init bound: |w| <= 1/sqrt(fan_in), biases zero.
  const Tensor& w = a.params().at("fc1.w").value;
  const float bound = 1.0f / std::sqrt(784.0f);
  for (int64_t i = 0; i < w.size(); ++i) {
    CHECK(std::abs(w[i]) <= bound);
  }
  const Tensor& bias = a.params().at("fc1.b").value;
  for (int64_t i = 0; i < bias.size(); ++i) CHECK(bias[i] == 0.0f);

  c.params().copy_values_from(a.params());
  CHECK(bits_equal(a.params().at("conv2.w").value, c.params().at("conv2.w").value));

  ParamStore other;
  other.add("x", {2});
  CHECK_THROWS_AS(other.copy_values_from(a.params()), std::invalid_argument);

  // Accumulating the same sample twice doubles the gradient; scale applies.
  Rng rng = Rng::substream(5, "bind");
  Tensor state = random_tensor(obs, rng, 0.0f, 1.0f);
  Tensor target({1}, {0.2f});
  auto run = [&](float scale, int times) {
    a.params().zero_grads();
    for (int i = 0; i < times; ++i) {
      Tape t;
      ParamBinder bind(t, a.params());
      const int q = a.forward(t, t.input(state), bind);
      t.backward(t.huber(t.pick(q, 0), t.input(target), 1.0f));
      bind.accumulate(a.params(), scale);
    }
    return a.params().at("head.b").grad[0];
  };
  const float g1 = run(1.0f, 1);
  const float g2 = run(1.0f, 2);
  const float gh = run(0.5f, 1);
  CHECK(g2 == doctest::Approx(2.0f * g1));
  CHECK(gh == doctest::Approx(0.5f * g1));
}

TEST_CASE("proxy networks are smaller than the victim networks") {
  const std::vector<int> obs = {4, 20, 20};
  QNetwork q(obs, 3, 1);
  ProxyNet p(obs, 3, 1);
  CHECK(p.params().total_elements() < q.params().total_elements());
  CHECK(p.params().has("conv1.w"));
  CHECK(!p.params().has("conv2.w"));  // one conv bank fewer than the victim
  // 96-wide dense layer.
  CHECK(p.params().at("fc1.w").value.dim(0) == 96);
}
