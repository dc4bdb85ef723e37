#include "trajbench/rmsd.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>

namespace trajbench {
namespace {

void check_inputs(std::span<const Vec3> mobile, std::span<const Vec3> reference) {
  if (mobile.size() != reference.size())
    throw std::invalid_argument("rmsd: coordinate sets differ in size (" +
                                std::to_string(mobile.size()) + " vs " +
                                std::to_string(reference.size()) + ")");
  if (mobile.size() < 3) throw std::invalid_argument("rmsd: at least 3 points are required");
  auto finite = [](std::span<const Vec3> s) {
    return std::all_of(s.begin(), s.end(), [](const Vec3& p) {
      return std::isfinite(p[0]) && std::isfinite(p[1]) && std::isfinite(p[2]);
    });
  };
  if (!finite(mobile) || !finite(reference))
    throw std::invalid_argument("rmsd: non-finite coordinate");
}

Vec3 centroid(std::span<const Vec3> pts) {
  Vec3 c{0, 0, 0};
  for (const auto& p : pts)
    for (int k = 0; k < 3; ++k) c[k] += p[k];
  for (double& v : c) v /= static_cast<double>(pts.size());
  return c;
}

// Rank < 2 of the centered point cloud (all points on one line or coincident).
bool is_degenerate(std::span<const Vec3> pts, const Vec3& c) {
  double best = -1.0;
  Vec3 dir{};
  for (const auto& p : pts) {
    const Vec3 d{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
    const double n2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
    if (n2 > best) {
      best = n2;
      dir = d;
    }
  }
  if (best <= std::numeric_limits<double>::min()) return true;
  const double len = std::sqrt(best);
  for (double& v : dir) v /= len;
  for (const auto& p : pts) {
    const Vec3 d{p[0] - c[0], p[1] - c[1], p[2] - c[2]};
    const Vec3 x{d[1] * dir[2] - d[2] * dir[1], d[2] * dir[0] - d[0] * dir[2],
                 d[0] * dir[1] - d[1] * dir[0]};
    if (std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) > 1e-10 * len) return false;
  }
  return true;
}

double det4(const double m[4][4]) {
  const double s0 = m[0][0] * m[1][1] - m[1][0] * m[0][1];
  const double s1 = m[0][0] * m[1][2] - m[1][0] * m[0][2];
  const double s2 = m[0][0] * m[1][3] - m[1][0] * m[0][3];
  const double s3 = m[0][1] * m[1][2] - m[1][1] * m[0][2];
  const double s4 = m[0][1] * m[1][3] - m[1][1] * m[0][3];
  const double s5 = m[0][2] * m[1][3] - m[1][2] * m[0][3];
  const double c5 = m[2][2] * m[3][3] - m[3][2] * m[2][3];
  const double c4 = m[2][1] * m[3][3] - m[3][1] * m[2][3];
  const double c3 = m[2][1] * m[3][2] - m[3][1] * m[2][2];
  const double c2 = m[2][0] * m[3][3] - m[3][0] * m[2][3];
  const double c1 = m[2][0] * m[3][2] - m[3][0] * m[2][2];
  const double c0 = m[2][0] * m[3][1] - m[3][0] * m[2][1];
  return s0 * c5 - s1 * c4 + s2 * c3 + s3 * c2 - s4 * c1 + s5 * c0;
}

constexpr double kRefineFraction = 1e-4;

using Mat3 = std::array<double, 9>;

// Unit quaternion spanning the null space of key - lambda*I, read off the
// adjugate column of largest norm, turned into a row-major rotation.
std::optional<Mat3> rotation_for(const double key[4][4], double lambda) {
  double a[4][4];
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) a[r][c] = key[r][c] - (r == c ? lambda : 0.0);

  auto minor3 = [&](int skip_r, int skip_c) {
    double m[3][3];
    for (int r = 0, i = 0; r < 4; ++r) {
      if (r == skip_r) continue;
      for (int c = 0, j = 0; c < 4; ++c) {
        if (c == skip_c) continue;
        m[i][j++] = a[r][c];
      }
      ++i;
    }
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  };

  std::array<double, 4> best{};
  double best_norm = 0.0;
  for (int col = 0; col < 4; ++col) {
    std::array<double, 4> q{};
    double n2 = 0.0;
    for (int row = 0; row < 4; ++row) {
      q[row] = ((row + col) % 2 ? -1.0 : 1.0) * minor3(col, row);
      n2 += q[row] * q[row];
    }
    if (n2 > best_norm) {
      best_norm = n2;
      best = q;
    }
  }
  if (!(best_norm > 0.0) || !std::isfinite(best_norm)) return std::nullopt;
  const double inv = 1.0 / std::sqrt(best_norm);
  const double w = best[0] * inv, x = best[1] * inv, y = best[2] * inv, z = best[3] * inv;
  return Mat3{w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y),
              2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x),
              2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z};
}

double explicit_residual(std::span<const Vec3> mobile, const Vec3& ca,
                         std::span<const Vec3> reference, const Vec3& cb, const Mat3& r) {
  double sum = 0.0;
  for (std::size_t i = 0; i < mobile.size(); ++i) {
    const double a[3] = {mobile[i][0] - ca[0], mobile[i][1] - ca[1], mobile[i][2] - ca[2]};
    for (int k = 0; k < 3; ++k) {
      const double d = r[3 * k] * a[0] + r[3 * k + 1] * a[1] + r[3 * k + 2] * a[2] -
                       (reference[i][k] - cb[k]);
      sum += d * d;
    }
  }
  return sum;
}

template <class T>
inline void keep(T const& value) {
  asm volatile("" : : "r,m"(value) : "memory");
}

double seconds_since(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b) {
  return std::chrono::duration<double>(b - a).count();
}

}  // namespace

QcpOutcome rmsd_qcp_detailed(std::span<const Vec3> mobile, std::span<const Vec3> reference) {
  check_inputs(mobile, reference);
  const std::size_t m = mobile.size();
  const Vec3 ca = centroid(mobile);
  const Vec3 cb = centroid(reference);

  if (is_degenerate(mobile, ca) || is_degenerate(reference, cb))
    return {rmsd_kabsch_oracle(mobile, reference), 0, true};

  double ga = 0.0, gb = 0.0;
  double s[3][3] = {};
  for (std::size_t i = 0; i < m; ++i) {
    const double a[3] = {mobile[i][0] - ca[0], mobile[i][1] - ca[1], mobile[i][2] - ca[2]};
    const double b[3] = {reference[i][0] - cb[0], reference[i][1] - cb[1],
                         reference[i][2] - cb[2]};
    ga += a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
    gb += b[0] * b[0] + b[1] * b[1] + b[2] * b[2];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) s[r][c] += a[r] * b[c];
  }

  const double sxx = s[0][0], sxy = s[0][1], sxz = s[0][2];
  const double syx = s[1][0], syy = s[1][1], syz = s[1][2];
  const double szx = s[2][0], szy = s[2][1], szz = s[2][2];

  // Symmetric traceless key matrix whose largest eigenvalue gives the optimum.
  const double key[4][4] = {
      {sxx + syy + szz, syz - szy, szx - sxz, sxy - syx},
      {syz - szy, sxx - syy - szz, sxy + syx, szx + sxz},
      {szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy},
      {sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz},
  };

  double sum_sq = 0.0;
  for (const auto& row : s)
    for (double v : row) sum_sq += v * v;
  const double c2 = -2.0 * sum_sq;
  const double c1 = 8.0 * (sxx * syz * szy + syy * szx * sxz + szz * sxy * syx - sxx * syy * szz -
                           syz * szx * sxy - szy * syx * sxz);
  const double c0 = det4(key);

  const double e0 = 0.5 * (ga + gb);
  double lambda = e0;
  int it = 0;
  bool converged = false;
  while (it < kQcpMaxIterations) {
    ++it;
    const double l2 = lambda * lambda;
    const double p = (l2 + c2) * l2 + c1 * lambda + c0;
    const double dp = 4.0 * l2 * lambda + 2.0 * c2 * lambda + c1;
    if (dp == 0.0 || !std::isfinite(dp)) break;
    const double delta = p / dp;
    lambda -= delta;
    // Absolute tolerance, or a few ulps when lambda is too large for it.
    if (std::fabs(delta) < kQcpTolerance ||
        std::fabs(delta) <= 4.0 * std::numeric_limits<double>::epsilon() * std::fabs(lambda)) {
      converged = true;
      break;
    }
  }
  if (!converged || !std::isfinite(lambda))
    return {rmsd_kabsch_oracle(mobile, reference), it, true};

  double residual = ga + gb - 2.0 * lambda;
  // Near-perfect fits lose every significant digit to cancellation above, so
  // the residual is summed directly under the optimal rotation instead.
  if (residual < kRefineFraction * (ga + gb)) {
    const auto rot = rotation_for(key, lambda);
    if (rot) residual = explicit_residual(mobile, ca, reference, cb, *rot);
  }
  return {std::sqrt(std::max(0.0, residual / static_cast<double>(m))), it, false};
}

double rmsd_qcp(std::span<const Vec3> mobile, std::span<const Vec3> reference) {
  return rmsd_qcp_detailed(mobile, reference).rmsd;
}

double rmsd_kabsch_oracle(std::span<const Vec3> mobile, std::span<const Vec3> reference) {
  check_inputs(mobile, reference);
  const auto m = static_cast<Eigen::Index>(mobile.size());
  Eigen::Matrix<double, Eigen::Dynamic, 3> a(m, 3), b(m, 3);
  for (Eigen::Index i = 0; i < m; ++i)
    for (int k = 0; k < 3; ++k) {
      a(i, k) = mobile[static_cast<std::size_t>(i)][k];
      b(i, k) = reference[static_cast<std::size_t>(i)][k];
    }
  a.rowwise() -= a.colwise().mean();
  b.rowwise() -= b.colwise().mean();

  const Eigen::Matrix3d h = a.transpose() * b;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d u = svd.matrixU();
  const Eigen::Matrix3d v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  const Eigen::Matrix3d rot = v * d * u.transpose();

  const Eigen::Matrix<double, Eigen::Dynamic, 3> diff = (a * rot.transpose()) - b;
  return std::sqrt(diff.squaredNorm() / static_cast<double>(m));
}

BlockError::BlockError(std::uint32_t rank, std::uint64_t frame, const std::string& cause)
    : std::runtime_error("rank " + std::to_string(rank) + ", frame " + std::to_string(frame) +
                         ": " + cause),
      rank_(rank),
      frame_(frame) {}

BlockOutput block_rmsd(const TrajectoryOpener& open, std::span<const std::uint32_t> selection,
                       std::span<const Vec3> reference, const BlockAssignment& block,
                       std::uint32_t workload_factor) {
  using clock = std::chrono::steady_clock;
  if (workload_factor < 1) throw std::invalid_argument("block_rmsd: workload factor must be >= 1");
  if (selection.size() != reference.size())
    throw std::invalid_argument("block_rmsd: selection and reference differ in size");
  if (block.start > block.stop) throw std::invalid_argument("block_rmsd: start > stop");

  BlockOutput out;
  RankTiming& t = out.timing;
  t.rank = block.rank;

  const auto rmsd_begin = clock::now();
  std::unique_ptr<FrameReader> reader;
  try {
    reader = open();
  } catch (const std::exception& e) {
    throw BlockError(block.rank, block.start, std::string("opening trajectory: ") + e.what());
  }
  std::vector<Vec3> mobile(selection.size());
  const auto opened = clock::now();
  const bool resident = reader->memory_resident();
  t.t_opening_trajectory = resident ? 0.0 : seconds_since(rmsd_begin, opened);

  if (block.stop > reader->n_frames())
    throw BlockError(block.rank, block.stop, "block exceeds trajectory length " +
                                                 std::to_string(reader->n_frames()));
  for (std::uint32_t idx : selection)
    if (block.size() > 0 && idx >= reader->n_atoms())
      throw BlockError(block.rank, block.start,
                       "selection index " + std::to_string(idx) + " out of range");

  out.results.reserve(block.size());
  CoordFrame frame;
  double t_io = 0.0, t_comp = 0.0;
  const auto loop_begin = clock::now();
  auto last_iteration = loop_begin;
  for (std::uint64_t f = block.start; f < block.stop; ++f) {
    const auto a = clock::now();
    try {
      if (f == block.start) reader->seek(f);
      reader->read_next(frame);
    } catch (const std::exception& e) {
      throw BlockError(block.rank, f, e.what());
    }
    const auto b = clock::now();
    for (std::size_t k = 0; k < selection.size(); ++k) mobile[k] = frame.positions[selection[k]];
    double value = 0.0;
    for (std::uint32_t rep = 0; rep < workload_factor; ++rep) {
      value = rmsd_qcp(mobile, reference);
      keep(value);
    }
    const auto c = clock::now();
    if (!resident) t_io += seconds_since(a, b);
    t_comp += seconds_since(b, c);
    out.results.push_back({frame.frame_index, frame.time, value});
    last_iteration = clock::now();
  }
  reader->close();
  const auto loop_end = clock::now();
  reader.reset();

  t.t_io = t_io;
  t.t_comp = t_comp;
  t.t_end_loop = seconds_since(last_iteration, loop_end);
  t.t_all_frame = seconds_since(loop_begin, loop_end);
  t.n_frames_processed = block.size();
  t.t_rmsd = seconds_since(rmsd_begin, clock::now());
  t.finalize();
  return out;
}

BlockOutput block_rmsd(const TrajectoryOpener& open, const System& system,
                       const BlockAssignment& block, std::uint32_t workload_factor) {
  return block_rmsd(open, system.mobile_indices, system.reference_positions, block,
                    workload_factor);
}

}  // namespace trajbench
