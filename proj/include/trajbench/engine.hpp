#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajbench/model.hpp"
#include "trajbench/rmsd.hpp"
#include "trajbench/trjio.hpp"

namespace trajbench {

struct StrategyConfig {
  Strategy strategy = Strategy::shared_seq;
  std::vector<fs::path> trajectory_paths;
  fs::path topology_path;  // optional for in_memory
  std::uint32_t n_workers = 1;
  std::uint32_t workload_factor = 1;

  // in_memory generation
  std::uint64_t seed = 0;
  std::uint64_t n_frames = 0;
  std::uint32_t n_atoms = 0;
  std::uint32_t n_mobile = 146;

  /// Chain readers compare each segment index with its file; disabling this
  /// trusts whatever sidecar is present.
  bool validate_chain_index = true;
  double timeout_seconds = 600.0;

  /// Throws std::invalid_argument on inconsistent settings.
  void validate() const;
};

/// Result record sent from a worker to rank 0.
///
/// Wire layout (little-endian):
///   u32 length of everything that follows
///   u32 rank | u64 start | u64 stop
///   u64 n | f64 rmsd[n] | u64 n | f64 times[n]
///   RankTiming: u32 rank, f64 x10 in declaration order, u64 n_frames_processed
///   f64 sent_at (steady clock, seconds) | i32 status | u32 len | error bytes
///   u32 CRC-32 of the fields between the length prefix and the CRC
struct GatherMessage {
  std::uint32_t rank = 0;
  std::uint64_t start = 0;
  std::uint64_t stop = 0;
  std::vector<double> rmsd;
  std::vector<double> times;
  RankTiming timing;
  double sent_at = 0.0;
  std::int32_t status = 0;
  std::string error;

  friend bool operator==(const GatherMessage&, const GatherMessage&) = default;
};

class WireError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_message(const GatherMessage& msg);
/// Expects one complete frame including the length prefix.
GatherMessage decode_message(std::span<const std::uint8_t> frame);
/// Number of bytes the frame starting at `buffer` occupies, once the prefix is available.
std::optional<std::size_t> message_frame_size(std::span<const std::uint8_t> buffer);

/// Worker failure or timeout, tagged with the offending rank (-1 when global).
class RunError : public std::runtime_error {
 public:
  RunError(int rank, const std::string& cause)
      : std::runtime_error(rank >= 0 ? "rank " + std::to_string(rank) + ": " + cause : cause),
        rank_(rank) {}
  int rank() const { return rank_; }

 private:
  int rank_;
};

struct RunResult {
  std::vector<double> rmsd;   // length T, frame order
  std::vector<double> times;  // ps
  std::vector<RankTiming> timings;
};

/// Spawns n_workers processes, each runs its block and sends a GatherMessage.
RunResult run_parallel(const StrategyConfig& config);

/// Single in-process pass over [0, T) with the strategy's reader; t_comm = 0.
RunResult run_serial(const StrategyConfig& config);

/// Loaded (or synthesized, for in_memory) system used by the runs.
System load_system(const StrategyConfig& config);
std::uint64_t total_frames(const StrategyConfig& config);

// ---- synthetic data -------------------------------------------------------

enum class TrajFormat { seq, dense };

inline constexpr double kSyntheticBoxNm = 10.0;
inline constexpr double kSyntheticTimestepPs = 1.0;

/// Frame `frame_index` of the synthetic trajectory for `seed`; independent of
/// any other frame.
CoordFrame synthetic_frame(std::uint64_t seed, std::uint64_t frame_index, std::uint32_t n_atoms);

/// Evenly spaced selection of n_mobile atoms with frame 0 as reference,
/// optionally rounded the way the stored format reads it back.
System synthetic_system(std::uint64_t seed, std::uint32_t n_atoms, std::uint32_t n_mobile,
                        std::optional<TrajFormat> stored_as = std::nullopt,
                        float precision = kDefaultPrecision);

struct GeneratedTrajectory {
  std::uint64_t frames = 0;
  System system;
};

/// Persists a synthetic trajectory. DENSE output holds only the selected atoms.
GeneratedTrajectory generate_synthetic(std::uint64_t n_frames, std::uint32_t n_atoms,
                                       std::uint64_t seed, const fs::path& path, TrajFormat format,
                                       float precision = kDefaultPrecision,
                                       std::optional<std::uint32_t> n_mobile = std::nullopt);

}  // namespace trajbench
