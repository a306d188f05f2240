#include "snpx/env.hpp"

#include <algorithm>
#include <cstring>
#include <stdexcept>

namespace snpx {

namespace {
int sign_of(int v) { return (v > 0) - (v < 0); }
}  // namespace

void Env::begin_episode() {
  episode_rng_ = Rng::substream(desc_.seed, "episode", static_cast<uint64_t>(episode_index_++));
  step_count_ = 0;
  terminal_ = false;
}

void Env::require_live(int action) const {
  if (terminal_) {
    throw std::runtime_error("step() called on a terminal episode; reset() first");
  }
  if (action < 0 || action >= action_count()) {
    throw std::invalid_argument("action out of range");
  }
}

void Env::fill_stack(const Tensor& frame) {
  const int64_t n = static_cast<int64_t>(grid_) * grid_;
  for (int k = 0; k < 4; ++k) {
    std::memcpy(obs_.data() + k * n, frame.data(), sizeof(float) * static_cast<size_t>(n));
  }
}

void Env::push_frame(const Tensor& frame) {
  const int64_t n = static_cast<int64_t>(grid_) * grid_;
  std::memmove(obs_.data(), obs_.data() + n, sizeof(float) * static_cast<size_t>(3 * n));
  std::memcpy(obs_.data() + 3 * n, frame.data(), sizeof(float) * static_cast<size_t>(n));
}

// ---- CatchEnv ----

CatchEnv::CatchEnv(const EnvDescriptor& desc, bool stochastic)
    : Env(desc), stochastic_(stochastic) {
  if (grid_ < 6) throw std::invalid_argument("catch grid too small");
  if (desc.drops < 1) throw std::invalid_argument("need at least one drop per episode");
}

int CatchEnv::spawn_column(int landing_col, int paddle_left) const {
  // Next spawn is a fixed mix of where the last object landed and where the
  // paddle stood, both of which are visible in the final frame of the drop.
  return (7 * landing_col + 13 * paddle_left + 5) % grid_;
}

Tensor CatchEnv::render() const {
  Tensor f({grid_, grid_});
  for (int idx : distractors_) f[idx] = kDistractorPixel;
  for (int j = 0; j < kCatchPaddleWidth; ++j) {
    f.at(grid_ - 1, paddle_left_ + j) = kPaddlePixel;
  }
  f.at(obj_row_, obj_col_) = kObjectPixel;
  return f;
}

void CatchEnv::reset() {
  begin_episode();
  paddle_left_ = episode_rng_.uniform_int(grid_ - kCatchPaddleWidth + 1);
  obj_col_ = episode_rng_.uniform_int(grid_);
  obj_row_ = 0;
  drops_done_ = 0;
  if (stochastic_) {
    distractors_.assign(kDistractorCount, 0);
    for (int& d : distractors_) {
      d = episode_rng_.uniform_int(grid_ - 1) * grid_ + episode_rng_.uniform_int(grid_);
    }
  }
  fill_stack(render());
}

EnvStep CatchEnv::step(int action) {
  require_live(action);
  EnvStep out;

  // A landed object respawns first, at a column derived from the previous
  // frame's visible state.
  const bool respawning = obj_row_ == grid_ - 1;
  if (respawning) {
    obj_col_ = spawn_column(obj_col_, paddle_left_);
    obj_row_ = 0;
  }

  if (action == 1) paddle_left_ = std::max(0, paddle_left_ - 1);
  if (action == 2) paddle_left_ = std::min(grid_ - kCatchPaddleWidth, paddle_left_ + 1);

  if (!respawning) {
    ++obj_row_;
    if (obj_row_ == grid_ - 1) {
      const bool caught =
          obj_col_ >= paddle_left_ && obj_col_ < paddle_left_ + kCatchPaddleWidth;
      out.reward = caught ? 1.0f : -1.0f;
      if (++drops_done_ == desc_.drops) out.terminal = true;
    }
  }

  if (stochastic_) {
    for (int& d : distractors_) {
      d = episode_rng_.uniform_int(grid_ - 1) * grid_ + episode_rng_.uniform_int(grid_);
    }
  }

  ++step_count_;
  if (step_count_ >= desc_.max_episode_len) out.terminal = true;
  terminal_ = out.terminal;
  push_frame(render());
  return out;
}

// ---- PongEnv ----

PongEnv::PongEnv(const EnvDescriptor& desc) : Env(desc) {
  if (grid_ < 10) throw std::invalid_argument("pong grid too small");
}

Tensor PongEnv::render() const {
  Tensor f({grid_, grid_});
  for (int j = 0; j < kPongOppHeight; ++j) f.at(opp_top_ + j, 0) = kPaddlePixel;
  for (int j = 0; j < kPongAgentHeight; ++j) f.at(agent_top_ + j, grid_ - 1) = kPaddlePixel;
  f.at(ball_r_, ball_c_) = kObjectPixel;
  return f;
}

void PongEnv::reset() {
  begin_episode();
  agent_top_ = episode_rng_.uniform_int(grid_ - kPongAgentHeight + 1);
  opp_top_ = episode_rng_.uniform_int(grid_ - kPongOppHeight + 1);
  ball_r_ = 5 + episode_rng_.uniform_int(grid_ - 10);
  ball_c_ = grid_ / 2;
  vx_ = episode_rng_.uniform_int(2) == 0 ? -1 : 1;
  vy_ = episode_rng_.uniform_int(3) - 1;
  fill_stack(render());
}

EnvStep PongEnv::step(int action) {
  require_live(action);
  EnvStep out;

  // Paddle decisions read the pre-move ball position (the one on screen).
  if (action == 1) agent_top_ = std::max(0, agent_top_ - 2);
  if (action == 2) agent_top_ = std::min(grid_ - kPongAgentHeight, agent_top_ + 2);

  // The scripted opponent only reacts while the ball is in its third of the
  // board; it tracks the ball one row per step. (Keying the reaction to the
  // visible ball column keeps the transition a function of the frame alone.)
  if (ball_c_ <= grid_ / 3) {
    const int center = opp_top_ + kPongOppHeight / 2;
    opp_top_ += sign_of(ball_r_ - center);
    opp_top_ = std::clamp(opp_top_, 0, grid_ - kPongOppHeight);
  }

  int newr = ball_r_ + vy_;
  if (newr < 0) {
    newr = -newr;
    vy_ = -vy_;
  } else if (newr > grid_ - 1) {
    newr = 2 * (grid_ - 1) - newr;
    vy_ = -vy_;
  }
  int newc = ball_c_ + vx_;

  if (newc == grid_ - 1) {  // agent's column
    if (newr >= agent_top_ && newr < agent_top_ + kPongAgentHeight) {
      vx_ = -1;
      vy_ = sign_of(newr - (agent_top_ + kPongAgentHeight / 2));
      newc = grid_ - 2;
    } else {
      out.reward = -1.0f;
      out.terminal = true;
    }
  } else if (newc == 0) {  // opponent's column
    if (newr >= opp_top_ && newr < opp_top_ + kPongOppHeight) {
      vx_ = 1;
      vy_ = sign_of(newr - (opp_top_ + kPongOppHeight / 2));
      newc = 1;
    } else {
      out.reward = 1.0f;
      out.terminal = true;
    }
  }

  ball_r_ = newr;
  ball_c_ = newc;

  ++step_count_;
  if (step_count_ >= desc_.max_episode_len) out.terminal = true;
  terminal_ = out.terminal;
  push_frame(render());
  return out;
}

std::unique_ptr<Env> make_env(const EnvDescriptor& desc) {
  if (desc.name == "mini-catch") return std::make_unique<CatchEnv>(desc, false);
  if (desc.name == "mini-catch-stochastic") return std::make_unique<CatchEnv>(desc, true);
  if (desc.name == "mini-pong") return std::make_unique<PongEnv>(desc);
  throw std::invalid_argument("unknown environment: " + desc.name);
}

}  // namespace snpx
