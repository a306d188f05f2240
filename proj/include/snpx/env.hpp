#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "snpx/rng.hpp"
#include "snpx/tensor.hpp"

namespace snpx {

struct EnvStep {
  float reward = 0.0f;
  bool terminal = false;
};

struct EnvDescriptor {
  std::string name;        // mini-pong | mini-catch | mini-catch-stochastic
  int grid = 20;           // square frame edge
  int max_episode_len = 300;
  int drops = 3;           // objects per episode (catch family)
  uint64_t seed = 0;       // fully determines all environment randomness
};

// Pixel environment with a 4-frame stacked observation, most recent frame
// last. reset() begins a new episode (the stack is the initial frame
// repeated four times); step() after a terminal transition throws.
class Env {
 public:
  virtual ~Env() = default;

  virtual void reset() = 0;
  virtual EnvStep step(int action) = 0;

  const Tensor& observation() const { return obs_; }
  int action_count() const { return 3; }
  int grid() const { return grid_; }
  const EnvDescriptor& descriptor() const { return desc_; }
  int episode_step() const { return step_count_; }
  bool terminal() const { return terminal_; }

 protected:
  explicit Env(const EnvDescriptor& desc)
      : desc_(desc), grid_(desc.grid), obs_({4, desc.grid, desc.grid}) {}

  // Starts episode bookkeeping and gives this episode its own RNG stream.
  void begin_episode();
  void require_live(int action) const;
  void fill_stack(const Tensor& frame);
  void push_frame(const Tensor& frame);

  EnvDescriptor desc_;
  int grid_;
  Tensor obs_;
  Rng episode_rng_{0};
  int episode_index_ = 0;
  int step_count_ = 0;
  bool terminal_ = true;  // must reset() before first step()
};

// Falling-object catch game: a 3-wide paddle on the bottom row, one object
// dropping a row per step, +1 for a catch and -1 for a miss, `drops` objects
// per episode. Fully deterministic given the visible frames: after a drop
// resolves, the next spawn column is a fixed function of where the object
// landed and where the paddle stood. The stochastic variant redraws a set of
// dim distractor pixels from the episode RNG every step.
class CatchEnv : public Env {
 public:
  CatchEnv(const EnvDescriptor& desc, bool stochastic);
  void reset() override;
  EnvStep step(int action) override;

 private:
  Tensor render() const;
  int spawn_column(int landing_col, int paddle_left) const;

  bool stochastic_;
  int paddle_left_ = 0;
  int obj_row_ = 0, obj_col_ = 0;
  int drops_done_ = 0;
  std::vector<int> distractors_;  // flattened pixel indices, stochastic only
};

// Two-paddle ball game. The agent guards the right column with a 5-high
// paddle moving up to 2 rows per step; a scripted opponent guards the left
// with a 3-high paddle that tracks the ball one row per step, but only while
// the ball is in the left third of the board (so the transition stays a
// function of the visible frame alone). The ball moves one column per step
// with vertical speed in {-1,0,1},
// reflecting off the top and bottom; paddles impart new vertical direction
// from the hit offset. +1 when the opponent misses, -1 when the agent does.
class PongEnv : public Env {
 public:
  explicit PongEnv(const EnvDescriptor& desc);
  void reset() override;
  EnvStep step(int action) override;

 private:
  Tensor render() const;

  int agent_top_ = 0;     // 5 rows tall, rightmost column
  int opp_top_ = 0;       // 3 rows tall, leftmost column
  int ball_r_ = 0, ball_c_ = 0;
  int vx_ = 1, vy_ = 0;
};

std::unique_ptr<Env> make_env(const EnvDescriptor& desc);

// Intensity conventions shared by the envs and the state-parsing tests.
constexpr float kPaddlePixel = 1.0f;
constexpr float kObjectPixel = 0.9f;
constexpr float kDistractorPixel = 0.4f;
constexpr int kCatchPaddleWidth = 3;
constexpr int kPongAgentHeight = 5;
constexpr int kPongOppHeight = 3;
constexpr int kDistractorCount = 8;

}  // namespace snpx
