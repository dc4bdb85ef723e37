#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "trajbench/model.hpp"

namespace trajbench {

struct RmsdResult {
  std::uint64_t frame_index = 0;
  double time = 0.0;
  double rmsd = 0.0;
};

/// Diagnostics for a single superposition.
struct QcpOutcome {
  double rmsd = 0.0;
  int iterations = 0;
  bool used_fallback = false;  // degenerate input or Newton did not converge
};

inline constexpr int kQcpMaxIterations = 50;
inline constexpr double kQcpTolerance = 1e-11;

/// Minimal RMSD over all proper rotations and translations, via the
/// quaternion characteristic polynomial. Throws std::invalid_argument on
/// shape mismatch, fewer than 3 points or non-finite input.
double rmsd_qcp(std::span<const Vec3> mobile, std::span<const Vec3> reference);
QcpOutcome rmsd_qcp_detailed(std::span<const Vec3> mobile, std::span<const Vec3> reference);

/// Same quantity through the SVD of the covariance matrix with det(R) = +1
/// correction; evaluates the residual of the explicit rotation.
double rmsd_kabsch_oracle(std::span<const Vec3> mobile, std::span<const Vec3> reference);

/// Sequential frame source used by block_rmsd.
class FrameReader {
 public:
  virtual ~FrameReader() = default;
  virtual std::uint64_t n_frames() const = 0;
  virtual std::uint32_t n_atoms() const = 0;
  /// Positions the reader so the next read returns frame `frame`.
  virtual void seek(std::uint64_t frame) = 0;
  virtual void read_next(CoordFrame& out) = 0;
  virtual void close() = 0;
  /// Memory-resident sources report zero opening and read time.
  virtual bool memory_resident() const { return false; }
};

using TrajectoryOpener = std::function<std::unique_ptr<FrameReader>()>;

/// Mid-block failure. Partial results are dropped by block_rmsd.
class BlockError : public std::runtime_error {
 public:
  BlockError(std::uint32_t rank, std::uint64_t frame, const std::string& cause);
  std::uint32_t rank() const { return rank_; }
  std::uint64_t frame() const { return frame_; }

 private:
  std::uint32_t rank_;
  std::uint64_t frame_;
};

struct BlockOutput {
  std::vector<RmsdResult> results;
  RankTiming timing;  // t_comm left at zero
};

/// Opens the trajectory, iterates the block, and computes the RMSD of every
/// frame `workload_factor` times. Selection indices address atoms of the
/// frames the opener produces.
BlockOutput block_rmsd(const TrajectoryOpener& open, std::span<const std::uint32_t> selection,
                       std::span<const Vec3> reference, const BlockAssignment& block,
                       std::uint32_t workload_factor);

/// Convenience overload selecting System::mobile_indices.
BlockOutput block_rmsd(const TrajectoryOpener& open, const System& system,
                       const BlockAssignment& block, std::uint32_t workload_factor);

}  // namespace trajbench
