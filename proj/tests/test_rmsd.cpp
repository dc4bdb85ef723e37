#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "testing.hpp"
#include "trajbench/engine.hpp"
#include "trajbench/rmsd.hpp"
#include "trajbench/trjio.hpp"

using namespace trajbench;
using namespace trajbench::testing;

namespace {

const std::vector<Vec3> kTetra = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
const std::vector<Vec3> kTetraNoisy = {
    {0.1, 0.2, -0.1}, {1.2, 0.1, 0.0}, {-0.1, 0.9, 0.2}, {0.0, 0.1, 1.1}, {0.8, 1.2, 0.9}};

}  // namespace

TEST(Qcp, IdentityIsZero) {
  std::mt19937_64 rng(1);
  const auto a = random_points(rng, 146);
  EXPECT_NEAR(rmsd_qcp(a, a), 0.0, 1e-7);
  EXPECT_NEAR(rmsd_kabsch_oracle(a, a), 0.0, 1e-7);
}

TEST(Qcp, TranslationIsRemoved) {
  std::mt19937_64 rng(2);
  const auto a = random_points(rng, 146);
  const auto b = transform(a, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {1.0, -2.0, 0.5});
  EXPECT_NEAR(rmsd_qcp(b, a), 0.0, 1e-7);
}

TEST(Qcp, QuarterTurnAboutZIsRemoved) {
  std::mt19937_64 rng(3);
  const auto a = random_points(rng, 146);
  const auto b = transform(a, {0, -1, 0, 1, 0, 0, 0, 0, 1});
  EXPECT_NEAR(rmsd_qcp(b, a), 0.0, 1e-7);
}

TEST(Qcp, FrozenFivePointValue) {
  // SVD reference computed offline in double precision.
  EXPECT_NEAR(rmsd_qcp(kTetraNoisy, kTetra), 0.17796058142261606, 1e-12);
  EXPECT_NEAR(rmsd_kabsch_oracle(kTetraNoisy, kTetra), 0.17796058142261606, 1e-12);
}

TEST(Qcp, MirrorImageIsNotSuperposable) {
  auto m = kTetra;
  for (auto& p : m) p[0] = -p[0];
  EXPECT_NEAR(rmsd_qcp(m, kTetra), 0.8944271909999157, 1e-12);
  EXPECT_GT(rmsd_kabsch_oracle(m, kTetra), 0.0);
}

TEST(Qcp, MatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(20240101);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_points(rng, 146);
    const auto b = random_points(rng, 146);
    const auto out = rmsd_qcp_detailed(a, b);
    EXPECT_FALSE(out.used_fallback);
    worst = std::max(worst, std::abs(out.rmsd - rmsd_kabsch_oracle(a, b)));
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Qcp, MatchesOracleOnNearlySuperposedPairs) {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_points(rng, 146);
    auto b = transform(a, random_rotation(rng), {3, -1, 2});
    for (auto& p : b)
      for (double& c : p) c += noise(rng);
    EXPECT_NEAR(rmsd_qcp(b, a), rmsd_kabsch_oracle(b, a), 1e-9);
  }
}

TEST(QcpProperty, SymmetryAndRigidInvariance) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> shift(-20, 20);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_points(rng, 146);
    const auto b = random_points(rng, 146);
    const double r = rmsd_qcp(a, b);
    EXPECT_NEAR(rmsd_qcp(b, a), r, 1e-9);
    const auto moved = transform(a, random_rotation(rng), {shift(rng), shift(rng), shift(rng)});
    EXPECT_NEAR(rmsd_qcp(moved, b), r, 1e-9);
    EXPECT_LE(r, raw_rmsd(centered(a), centered(b)) + 1e-12);
  }
}

TEST(QcpProperty, RigidCopiesAreZero) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> shift(-20, 20);
  for (int i = 0; i < 1000; ++i) {
    const auto a = random_points(rng, 146);
    const auto b = transform(a, random_rotation(rng), {shift(rng), shift(rng), shift(rng)});
    EXPECT_NEAR(rmsd_qcp(b, a), 0.0, 1e-7);
  }
}

TEST(Qcp, CollinearInputFallsBack) {
  std::vector<Vec3> line, other;
  for (int i = 0; i < 10; ++i) {
    line.push_back({double(i), 2.0 * i, -1.0 * i});
    other.push_back({0.5 * i, 0.0, 3.0 * i});
  }
  const auto out = rmsd_qcp_detailed(line, other);
  EXPECT_TRUE(std::isfinite(out.rmsd));
  EXPECT_NEAR(out.rmsd, rmsd_kabsch_oracle(line, other), 1e-9);
}

TEST(Qcp, RejectsBadShapes) {
  const std::vector<Vec3> two = {{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(rmsd_qcp(two, two), std::invalid_argument);
  EXPECT_THROW(rmsd_qcp(kTetra, two), std::invalid_argument);
  EXPECT_THROW(rmsd_kabsch_oracle(two, two), std::invalid_argument);
  auto nan = kTetra;
  nan[2][1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(rmsd_qcp(nan, kTetra), std::invalid_argument);
}

namespace {

TrajectoryOpener memory_opener(const std::vector<CoordFrame>& frames, std::uint32_t n_atoms) {
  return [&frames, n_atoms] {
    return std::make_unique<MemoryReader>(frames, 0, frames.size(), n_atoms);
  };
}

std::vector<CoordFrame> synthetic(std::uint64_t n, std::uint32_t atoms, std::uint64_t seed = 9) {
  std::vector<CoordFrame> frames;
  for (std::uint64_t i = 0; i < n; ++i) frames.push_back(synthetic_frame(seed, i, atoms));
  return frames;
}

}  // namespace

TEST(BlockRmsd, FramesEqualToReferenceGiveZero) {
  const auto sys = synthetic_system(9, 200, 146);
  std::vector<CoordFrame> frames(20, synthetic_frame(9, 0, 200));
  for (std::uint64_t i = 0; i < frames.size(); ++i) frames[i].frame_index = i;
  const auto out = block_rmsd(memory_opener(frames, 200), sys, {0, 0, 20}, 1);
  ASSERT_EQ(out.results.size(), 20u);
  for (const auto& r : out.results) EXPECT_NEAR(r.rmsd, 0.0, 1e-7);
}

TEST(BlockRmsd, SliceEqualsSerialRun) {
  const auto sys = synthetic_system(9, 341, 146);
  const auto frames = synthetic(100, 341);
  const auto open = memory_opener(frames, 341);
  const auto full = block_rmsd(open, sys, {0, 0, 100}, 1);
  const auto part = block_rmsd(open, sys, {1, 25, 50}, 1);
  ASSERT_EQ(part.results.size(), 25u);
  for (std::size_t k = 0; k < 25; ++k) {
    EXPECT_EQ(part.results[k].frame_index, 25 + k);
    EXPECT_EQ(part.results[k].rmsd, full.results[25 + k].rmsd);
  }
  EXPECT_EQ(part.timing.n_frames_processed, 25u);
  EXPECT_TRUE(part.timing.identities_hold());
}

TEST(BlockRmsd, WorkloadFactorKeepsValues) {
  const auto sys = synthetic_system(9, 341, 146);
  const auto frames = synthetic(50, 341);
  const auto open = memory_opener(frames, 341);
  const auto x1 = block_rmsd(open, sys, {0, 0, 50}, 1);
  const auto x4 = block_rmsd(open, sys, {0, 0, 50}, 4);
  for (std::size_t k = 0; k < 50; ++k) EXPECT_EQ(x1.results[k].rmsd, x4.results[k].rmsd);
  EXPECT_GT(x4.timing.t_comp, x1.timing.t_comp);
}

TEST(BlockRmsd, MemorySourceHasNoIo) {
  const auto sys = synthetic_system(9, 100, 50);
  const auto frames = synthetic(10, 100);
  const auto out = block_rmsd(memory_opener(frames, 100), sys, {0, 0, 10}, 1);
  EXPECT_EQ(out.timing.t_io, 0.0);
  EXPECT_EQ(out.timing.t_opening_trajectory, 0.0);
}

TEST(BlockRmsd, EmptyBlock) {
  const auto sys = synthetic_system(9, 100, 50);
  const auto frames = synthetic(3, 100);
  const auto out = block_rmsd(memory_opener(frames, 100), sys, {4, 3, 3}, 1);
  EXPECT_TRUE(out.results.empty());
  EXPECT_TRUE(out.timing.identities_hold());
}

namespace {

class FailingReader final : public FrameReader {
 public:
  std::uint64_t n_frames() const override { return 10; }
  std::uint32_t n_atoms() const override { return 5; }
  void seek(std::uint64_t f) override { next_ = f; }
  void read_next(CoordFrame& out) override {
    if (next_ == 6) throw std::runtime_error("disk gone");
    out.frame_index = next_++;
    out.positions = kTetra;
  }
  void close() override {}

 private:
  std::uint64_t next_ = 0;
};

}  // namespace

TEST(BlockRmsd, ReadFailureCarriesRankAndFrame) {
  const std::vector<std::uint32_t> sel = {0, 1, 2, 3, 4};
  try {
    block_rmsd([] { return std::make_unique<FailingReader>(); }, sel, kTetra, {3, 4, 9}, 1);
    FAIL() << "expected BlockError";
  } catch (const BlockError& e) {
    EXPECT_EQ(e.rank(), 3u);
    EXPECT_EQ(e.frame(), 6u);
    EXPECT_NE(std::string(e.what()).find("disk gone"), std::string::npos);
  }
}
