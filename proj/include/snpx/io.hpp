#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "snpx/agents.hpp"
#include "snpx/analysis.hpp"
#include "snpx/params.hpp"
#include "snpx/snoop.hpp"

namespace snpx {

// ---- deterministic text primitives ----

// Shortest round-trip decimal form (std::to_chars), so identical values
// always print identical bytes.
std::string float_text(float v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);
std::vector<uint8_t> read_binary_file(const std::string& path);
void write_binary_file(const std::string& path, const std::vector<uint8_t>& bytes);

// ---- CSV ----

struct CsvTable {
  std::vector<std::string> header;  // mandatory
  std::vector<std::vector<std::string>> rows;
};

// UTF-8, '\n' line ends, minimal quoting (fields holding comma, quote, or
// newline get quoted with doubled inner quotes).
std::string csv_text(const CsvTable& table);
CsvTable parse_csv(const std::string& text);

// Long-form sweep schema: one row per episode —
// env,agent,source,method,norm,epsilon,seed,episode,reward.
CsvTable sweep_csv(const SweepTable& table, uint64_t seed);

// ---- PGM (binary P5, maxval 255) ----

// Values map linearly from [lo, hi] to 0..255, clamped.
std::vector<uint8_t> pgm_bytes(const float* data, int h, int w, float lo, float hi);
void write_pgm(const std::string& path, const float* data, int h, int w, float lo = 0.0f,
               float hi = 1.0f);
// Saliency convenience: scales by the map's own maximum (zero map stays zero).
void write_pgm(const std::string& path, const SaliencyMap& map);

// ---- SVG line plots ----

struct PlotSeries {
  std::string label;
  std::vector<std::pair<float, float>> points;  // (x, y), drawn in given order
};

// Self-contained fixed-size plot with axes, min/max tick labels, and a
// legend; byte-deterministic for identical inputs.
std::string svg_line_plot(const std::string& title, const std::string& x_label,
                          const std::string& y_label,
                          const std::vector<PlotSeries>& series);
void write_svg(const std::string& path, const std::string& svg);

// ---- checkpoints ----
// Layout: "SNPX" magic, format version u32, u32-length-prefixed JSON
// metadata, then one block per parameter in store order: u32 name length,
// name bytes, u32 rank, rank u32 dims, raw f32 payload. All integers and
// floats little-endian. Inference snapshots: optimizer moments stay out.

inline constexpr uint32_t kCheckpointVersion = 1;

enum class CheckpointError { kMagic, kVersion, kTruncated, kKind, kMalformed };

std::string checkpoint_error_name(CheckpointError e);

class CheckpointIoError : public std::runtime_error {
 public:
  CheckpointIoError(CheckpointError code, const std::string& what)
      : std::runtime_error(checkpoint_error_name(code) + ": " + what), code_(code) {}
  CheckpointError code() const { return code_; }

 private:
  CheckpointError code_;
};

struct CheckpointMeta {
  std::string kind;  // dqn | ppo | imitator | assessor | psychic | ac_psychic
  std::vector<int> obs_shape;
  int actions = 3;
  std::string threat;  // empty for agents; S | SR | SA | SRA for proxies
  uint64_t seed = 0;
  std::string env;
};

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const ParamStore& params);

// Fills `into` (must be empty) with the stored blocks and returns the
// metadata. When expect_kind is nonempty, a different stored kind raises
// CheckpointError::kKind.
CheckpointMeta load_checkpoint(const std::string& path, ParamStore& into,
                               const std::string& expect_kind = "");
CheckpointMeta read_checkpoint_meta(const std::string& path);

// Model-level wrappers: reconstruct the network from metadata, then copy the
// stored values in (names and shapes must match exactly).
void save_policy(const std::string& path, const Policy& p, const std::string& env_name,
                 uint64_t seed);
Policy load_policy(const std::string& path);
void save_proxy(const std::string& path, const ProxyModel& m, const std::string& env_name,
                uint64_t seed);
ProxyModel load_proxy(const std::string& path);

}  // namespace snpx
