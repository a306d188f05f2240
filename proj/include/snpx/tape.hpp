#pragma once

#include <cstdint>
#include <deque>
#include <vector>

#include "snpx/tensor.hpp"

namespace snpx {

// Reverse-mode autodiff over a flat op tape. Each forward call evaluates
// eagerly and records one fixed-size OpRecord; backward() replays the tape
// in reverse with a switch dispatch. Tapes are cheap, single-use objects:
// build one per sample, read the gradients you need, throw it away.
//
// Parameter tensors are attached by pointer (shared, read-only) while their
// gradients live inside the tape, so several tapes can evaluate the same
// network concurrently and the caller reduces per-sample gradients in a
// fixed order afterwards.

enum class OpKind : uint8_t {
  Dense,
  Conv2d,
  Relu,
  Softmax,
  Reshape,
  Upsample2x,
  Concat,
  Pick,
  Add,
  Scale,
  CrossEntropy,
  Huber,
  L2Loss,
  PpoClip,
  Entropy,
};

struct OpRecord {
  OpKind kind;
  int a = -1, b = -1, c = -1;  // operand node ids
  int out = -1;
  int i0 = 0, i1 = 0;       // op-specific ints (stride, pad, picked index, ...)
  float f0 = 0.0f, f1 = 0.0f, f2 = 0.0f;  // op-specific floats
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf holding a copy of `t`; its gradient is readable after backward().
  int input(const Tensor& t);

  // Leaf referencing external storage (network weights). The tensor must
  // outlive the tape; its gradient still lives in the tape.
  int param(const Tensor& external);

  const Tensor& value(int id) const;
  const Tensor& grad(int id) const;

  int dense(int x, int w, int b);
  int conv2d(int x, int w, int b, int stride, int pad);
  int relu(int x);
  int softmax(int x);
  int reshape(int x, std::vector<int> new_shape);
  int flatten(int x);
  int upsample2x(int x);           // nearest-neighbour, [c,h,w] -> [c,2h,2w]
  int concat(int x, int y);        // rank-1 concatenation
  int pick(int x, int index);      // scalar y = x[index]
  int add(int x, int y);
  int scale(int x, float s);

  // Scalar losses. Targets are ordinary nodes; pass constants via input().
  int cross_entropy(int logits, int target_dist);
  int huber(int pred, int target, float delta);
  int l2_loss(int pred, int target);  // 0.5 * mean squared error

  // Clipped policy-ratio objective (negated, so minimising it improves the
  // policy): -min(r*adv, clip(r, 1-alpha, 1+alpha)*adv) with
  // r = pi(action|logits) / exp(old_logp).
  int ppo_clip(int logits, int action, float old_logp, float advantage, float alpha);

  int entropy(int logits);  // H(softmax(logits))

  // Seeds d(loss)/d(loss) = seed and sweeps the tape in reverse. The loss
  // node must be scalar. Call at most once per tape.
  void backward(int loss, float seed = 1.0f);

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    Tensor val;            // storage when owned
    Tensor grd;
    const Tensor* vptr = nullptr;  // set for param nodes
  };

  const Tensor& val_of(int id) const;
  Tensor& grad_of(int id);
  // Nodes live in a deque so references handed out by val_of/grad_of stay
  // valid while later ops append nodes.
  int make_node(std::vector<int> shape);
  void check_id(int id) const;
  void backward_op(const OpRecord& op);

  std::deque<Node> nodes_;
  std::vector<OpRecord> ops_;
  bool swept_ = false;
};

}  // namespace snpx
