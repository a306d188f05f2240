#include "snpx/replay.hpp"

#include <cstring>
#include <stdexcept>

namespace snpx {

ReplayBuffer::ReplayBuffer(int capacity, int grid, int stack)
    : capacity_(capacity), grid_(grid), stack_(stack) {
  if (capacity < 2) throw std::invalid_argument("replay capacity must be >= 2");
  if (grid < 1 || stack < 1) throw std::invalid_argument("bad replay geometry");
  frames_.assign(static_cast<size_t>(capacity) * grid * grid, 0.0f);
  actions_.assign(capacity, 0);
  rewards_.assign(capacity, 0.0f);
  terminals_.assign(capacity, 0);
  starts_.assign(capacity, 0);
}

void ReplayBuffer::push(const float* frame, bool episode_start, int action,
                        float reward, bool terminal) {
  const int s = slot(end_seq_);
  std::memcpy(frames_.data() + static_cast<size_t>(s) * grid_ * grid_, frame,
              sizeof(float) * static_cast<size_t>(grid_ * grid_));
  actions_[s] = action;
  rewards_[s] = reward;
  terminals_[s] = terminal ? 1 : 0;
  starts_[s] = episode_start ? 1 : 0;
  ++end_seq_;
  if (end_seq_ - begin_seq_ > capacity_) begin_seq_ = end_seq_ - capacity_;
}

void ReplayBuffer::build_stack(int64_t last_seq, Tensor& out) const {
  // Walk back from the newest slot; once an episode-start entry is reached,
  // its frame fills every remaining (older) slot, mirroring env reset stacks.
  int64_t seq = last_seq;
  for (int k = stack_ - 1; k >= 0; --k) {
    const size_t src = static_cast<size_t>(slot(seq)) * grid_ * grid_;
    std::memcpy(out.data() + static_cast<size_t>(k) * grid_ * grid_,
                frames_.data() + src, sizeof(float) * static_cast<size_t>(grid_ * grid_));
    if (!starts_[slot(seq)]) --seq;
  }
}

std::optional<Transition> ReplayBuffer::transition_at(int64_t seq) const {
  if (seq < begin_seq_ || seq >= end_seq_) return std::nullopt;
  const bool terminal = terminals_[slot(seq)] != 0;
  // The stack needs up to stack_-1 predecessors unless an episode start cuts
  // the walk short; the successor entry supplies the next state's frame.
  int64_t back = seq;
  for (int k = 0; k < stack_ - 1 && !starts_[slot(back)]; ++k) {
    if (--back < begin_seq_) return std::nullopt;
  }
  if (!terminal && seq + 1 >= end_seq_) return std::nullopt;

  Transition tr;
  tr.state = Tensor({stack_, grid_, grid_});
  tr.next_state = Tensor({stack_, grid_, grid_});
  build_stack(seq, tr.state);
  if (terminal) {
    tr.next_state = tr.state;
  } else {
    build_stack(seq + 1, tr.next_state);
  }
  tr.action = actions_[slot(seq)];
  tr.reward = rewards_[slot(seq)];
  tr.terminal = terminal;
  return tr;
}

Transition ReplayBuffer::sample(Rng& rng) const {
  if (size() == 0) throw std::runtime_error("sampling from an empty replay buffer");
  for (int attempt = 0; attempt < 10000; ++attempt) {
    const int64_t seq = begin_seq_ + rng.uniform_int(size());
    auto tr = transition_at(seq);
    if (tr) return std::move(*tr);
  }
  throw std::runtime_error("replay buffer has no sampleable transition");
}

std::vector<Transition> ReplayBuffer::sample_batch(int n, Rng& rng) const {
  std::vector<Transition> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(sample(rng));
  return out;
}

}  // namespace snpx
