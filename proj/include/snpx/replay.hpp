#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "snpx/rng.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

struct Transition {
  Tensor state;       // [stack, grid, grid]
  Tensor next_state;  // [stack, grid, grid]; kept equal to state when terminal
  int action = 0;
  float reward = 0.0f;
  bool terminal = false;
};

// Fixed-capacity ring of per-step records. Only one frame is stored per step;
// four-frame stacks are rebuilt on sampling by walking backwards, repeating
// the episode's first frame near episode starts exactly the way the
// environments pad their reset stacks.
class ReplayBuffer {
 public:
  ReplayBuffer(int capacity, int grid, int stack = 4);

  // frame points at grid*grid floats: the newest frame of the state the
  // action was taken from. episode_start marks the first step of an episode.
  void push(const float* frame, bool episode_start, int action, float reward,
            bool terminal);

  int size() const { return static_cast<int>(end_seq_ - begin_seq_); }
  int capacity() const { return capacity_; }
  int64_t begin_seq() const { return begin_seq_; }  // oldest surviving entry
  int64_t end_seq() const { return end_seq_; }      // one past the newest

  // Materializes the transition recorded at an absolute sequence number, or
  // nothing if its frame history was overwritten or its successor is not in
  // the buffer yet. Sampling draws uniformly over sequence numbers and
  // rejects the handful of boundary entries this filters out.
  std::optional<Transition> transition_at(int64_t seq) const;

  Transition sample(Rng& rng) const;
  std::vector<Transition> sample_batch(int n, Rng& rng) const;

 private:
  int slot(int64_t seq) const { return static_cast<int>(seq % capacity_); }
  void build_stack(int64_t last_seq, Tensor& out) const;

  int capacity_;
  int grid_;
  int stack_;
  int64_t begin_seq_ = 0;
  int64_t end_seq_ = 0;
  std::vector<float> frames_;  // capacity * grid * grid
  std::vector<int> actions_;
  std::vector<float> rewards_;
  std::vector<uint8_t> terminals_;
  std::vector<uint8_t> starts_;
};

}  // namespace snpx
