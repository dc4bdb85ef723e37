#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace trajbench {

using Vec3 = std::array<double, 3>;
using Box = std::array<double, 9>;

/// One trajectory frame. Positions and box are in nm, time in ps.
struct CoordFrame {
  std::uint64_t frame_index = 0;
  double time = 0.0;
  Box box{};
  std::vector<Vec3> positions;
};

/// Topology plus the selected (mobile) subgroup and its reference positions.
struct System {
  std::uint32_t n_atoms = 0;
  std::vector<std::string> atom_names;        // one per mobile atom
  std::vector<std::uint32_t> mobile_indices;  // strictly increasing
  std::vector<Vec3> reference_positions;      // one row per mobile atom

  std::size_t mobile_count() const { return mobile_indices.size(); }

  /// Throws std::invalid_argument when an invariant is broken.
  void validate() const;
};

/// Contiguous frame range [start, stop) owned by one rank.
struct BlockAssignment {
  std::uint32_t rank = 0;
  std::uint64_t start = 0;
  std::uint64_t stop = 0;

  std::uint64_t size() const { return stop - start; }
  friend bool operator==(const BlockAssignment&, const BlockAssignment&) = default;
};

/// Even split with the remainder frames going to the lowest ranks.
/// Throws std::invalid_argument for n_workers == 0.
std::vector<BlockAssignment> decompose_blocks(std::uint64_t n_frames_total,
                                              std::uint32_t n_workers);

/// Per-rank timing quantities (seconds). The three derived fields are only
/// ever written by finalize() / set_comm() so the defining identities hold
/// bit-for-bit.
struct RankTiming {
  std::uint32_t rank = 0;
  double t_opening_trajectory = 0.0;
  double t_io = 0.0;
  double t_comp = 0.0;
  double t_end_loop = 0.0;
  double t_all_frame = 0.0;
  double t_rmsd = 0.0;
  double t_comm = 0.0;
  double t_overhead1 = 0.0;
  double t_overhead2 = 0.0;
  double t_n = 0.0;
  std::uint64_t n_frames_processed = 0;

  /// Recomputes overheads and t_n from the raw measurements.
  void finalize();
  void set_comm(double seconds) {
    t_comm = seconds;
    finalize();
  }

  /// True iff the construction identities hold exactly, raw timings are
  /// non-negative and the overheads are above -1 ms.
  bool identities_hold() const;

  friend bool operator==(const RankTiming&, const RankTiming&) = default;
};

enum class Strategy { shared_seq, subfile, dense_parallel, chain, in_memory };

std::string_view to_string(Strategy s);
/// Throws std::invalid_argument on an unknown name.
Strategy strategy_from_string(std::string_view name);

struct RepeatRecord {
  std::vector<RankTiming> ranks;
  std::vector<double> rmsd;
};

struct BenchRun {
  Strategy strategy = Strategy::shared_seq;
  std::uint32_t n_workers = 1;
  std::uint32_t workload_factor = 1;
  std::uint64_t n_frames_total = 0;
  std::vector<RepeatRecord> repeats;

  void validate() const;
};

}  // namespace trajbench
