#include "trajbench/model.hpp"

#include <cmath>
#include <stdexcept>

namespace trajbench {

void System::validate() const {
  if (reference_positions.size() != mobile_indices.size())
    throw std::invalid_argument("reference row count differs from mobile count");
  for (std::size_t i = 0; i < mobile_indices.size(); ++i) {
    if (mobile_indices[i] >= n_atoms)
      throw std::invalid_argument("mobile index " + std::to_string(mobile_indices[i]) +
                                  " out of range for " + std::to_string(n_atoms) + " atoms");
    if (i > 0 && mobile_indices[i] <= mobile_indices[i - 1])
      throw std::invalid_argument("mobile indices must be strictly increasing");
  }
  for (const auto& r : reference_positions)
    for (double c : r)
      if (!std::isfinite(c)) throw std::invalid_argument("non-finite reference coordinate");
}

std::vector<BlockAssignment> decompose_blocks(std::uint64_t n_frames_total,
                                              std::uint32_t n_workers) {
  if (n_workers == 0) throw std::invalid_argument("decompose_blocks: n_workers must be >= 1");
  const std::uint64_t base = n_frames_total / n_workers;
  const std::uint64_t extra = n_frames_total % n_workers;
  std::vector<BlockAssignment> blocks;
  blocks.reserve(n_workers);
  std::uint64_t start = 0;
  for (std::uint32_t r = 0; r < n_workers; ++r) {
    const std::uint64_t len = base + (r < extra ? 1 : 0);
    blocks.push_back({r, start, start + len});
    start += len;
  }
  return blocks;
}

void RankTiming::finalize() {
  t_overhead1 = t_all_frame - t_io - t_comp - t_end_loop;
  t_overhead2 = t_rmsd - t_all_frame - t_opening_trajectory;
  t_n = t_rmsd + t_comm;
}

bool RankTiming::identities_hold() const {
  constexpr double clock_noise = -1e-3;
  const bool exact = t_n == t_rmsd + t_comm &&
                     t_overhead1 == t_all_frame - t_io - t_comp - t_end_loop &&
                     t_overhead2 == t_rmsd - t_all_frame - t_opening_trajectory;
  const bool raw_ok = t_opening_trajectory >= 0 && t_io >= 0 && t_comp >= 0 && t_end_loop >= 0 &&
                      t_all_frame >= 0 && t_rmsd >= 0 && t_comm >= 0;
  return exact && raw_ok && t_overhead1 >= clock_noise && t_overhead2 >= clock_noise;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::shared_seq: return "shared_seq";
    case Strategy::subfile: return "subfile";
    case Strategy::dense_parallel: return "dense_parallel";
    case Strategy::chain: return "chain";
    case Strategy::in_memory: return "in_memory";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
  for (auto s : {Strategy::shared_seq, Strategy::subfile, Strategy::dense_parallel, Strategy::chain,
                 Strategy::in_memory})
    if (to_string(s) == name) return s;
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

void BenchRun::validate() const {
  for (const auto& rep : repeats) {
    if (rep.ranks.size() != n_workers)
      throw std::invalid_argument("repeat holds " + std::to_string(rep.ranks.size()) +
                                  " rank timings, expected " + std::to_string(n_workers));
    if (rep.rmsd.size() != n_frames_total)
      throw std::invalid_argument("gathered RMSD array length mismatch");
  }
}

}  // namespace trajbench
