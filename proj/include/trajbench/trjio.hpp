#pragma once

// Trajectory storage.
//
// SEQ   variable-length lossy records, sequential access, optional sidecar
//       offset index (<path>.offidx) for random access.
// DENSE fixed-stride T x 3M float32 array of a selected atom subset.
//
// All multi-byte fields are little-endian.
//
// SEQ record (64-byte fixed header, then payload):
//   u32 magic 0x4D445351 | u64 frame_index | f32 time | f32 box[9]
//   f32 precision | u32 n_atoms | u32 payload_len | payload
// Payload: zigzag LEB128 varints, atom-major x,y,z, each the difference of
// round(coord * precision) against the same component of the previous atom
// (the first atom against 0).
//
// .offidx: u64 n_frames | u32 n_atoms | u64 file_size | u64 mtime | u64 offsets[n]
//
// DENSE header (36 bytes):
//   u32 magic 0x4D444453 | u32 version=1 | u64 n_frames | u32 n_atoms_stored
//   u64 times_offset | u64 coords_offset
// followed by f32 times[n_frames] and f32 coords[n_frames][3*n_atoms_stored].

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "trajbench/model.hpp"
#include "trajbench/rmsd.hpp"

namespace trajbench {

namespace fs = std::filesystem;

inline constexpr std::uint32_t kSeqMagic = 0x4D445351;
inline constexpr std::size_t kSeqHeaderBytes = 64;
inline constexpr std::uint32_t kDenseMagic = 0x4D444453;
inline constexpr std::uint32_t kDenseVersion = 1;
inline constexpr std::size_t kDenseHeaderBytes = 36;
inline constexpr std::size_t kIndexHeaderBytes = 28;
inline constexpr float kDefaultPrecision = 1000.0f;

/// Malformed file content; `position` is the byte offset where decoding failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::uint64_t position)
      : std::runtime_error(what + " at byte " + std::to_string(position)), position_(position) {}
  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t position_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- codec primitives --------------------------------------------------

constexpr std::uint64_t zigzag_encode(std::int64_t v) {
  return (static_cast<std::uint64_t>(v) << 1) ^ static_cast<std::uint64_t>(v >> 63);
}
constexpr std::int64_t zigzag_decode(std::uint64_t v) {
  return static_cast<std::int64_t>(v >> 1) ^ -static_cast<std::int64_t>(v & 1);
}

void append_varint(std::vector<std::uint8_t>& out, std::uint64_t v);
/// Advances `pos`. Throws FormatError on truncation or overlong encoding.
std::uint64_t read_varint(std::span<const std::uint8_t> in, std::size_t& pos);

std::vector<std::uint8_t> encode_positions(std::span<const Vec3> positions, float precision);
void decode_positions(std::span<const std::uint8_t> payload, float precision,
                      std::uint32_t n_atoms, std::vector<Vec3>& out);

/// The value a coordinate reads back as after a SEQ round trip.
double quantize(double coord, float precision);

// ---- SEQ ----------------------------------------------------------------

struct SeqRecordHeader {
  std::uint32_t magic = kSeqMagic;
  std::uint64_t frame_index = 0;
  float time = 0.0f;
  std::array<float, 9> box{};
  float precision = kDefaultPrecision;
  std::uint32_t n_atoms = 0;
  std::uint32_t payload_len = 0;

  std::array<std::uint8_t, kSeqHeaderBytes> encode() const;
  static SeqRecordHeader decode(std::span<const std::uint8_t, kSeqHeaderBytes> bytes);
};

class SeqWriter {
 public:
  SeqWriter(const fs::path& path, float precision = kDefaultPrecision);
  void write(const CoordFrame& frame);
  /// Appends an already encoded record verbatim.
  void write_raw(const SeqRecordHeader& header, std::span<const std::uint8_t> payload);
  std::uint64_t frames_written() const { return count_; }
  void close();

 private:
  fs::path path_;
  std::ofstream out_;
  float precision_;
  std::uint64_t count_ = 0;
  std::optional<std::uint32_t> n_atoms_;
};

std::uint64_t seq_write(std::span<const CoordFrame> frames, float precision, const fs::path& path);

struct OffsetIndex {
  std::uint64_t n_frames = 0;
  std::uint32_t n_atoms = 0;
  std::uint64_t trajectory_file_size = 0;
  std::uint64_t trajectory_mtime = 0;
  std::vector<std::uint64_t> offsets;

  friend bool operator==(const OffsetIndex&, const OffsetIndex&) = default;
};

fs::path index_path(const fs::path& trajectory);
std::uint64_t file_mtime_seconds(const fs::path& path);

/// One sequential scan; does not touch the sidecar.
OffsetIndex seq_scan_index(const fs::path& path);
/// Scans and persists the sidecar.
OffsetIndex seq_build_index(const fs::path& path);
void write_index(const fs::path& sidecar, const OffsetIndex& index);
/// nullopt when the sidecar is missing or unreadable.
std::optional<OffsetIndex> load_index(const fs::path& sidecar);
/// True iff (n_atoms, size, mtime) all match the file on disk. Never throws.
bool seq_validate_index(const fs::path& path, const OffsetIndex& index);
/// Loads a valid sidecar or rebuilds it.
OffsetIndex ensure_index(const fs::path& path);

CoordFrame seq_read_frame(const fs::path& path, const OffsetIndex& index, std::uint64_t i);
std::vector<CoordFrame> seq_read_all(const fs::path& path);

struct IndexPolicy {
  bool validate = true;           // compare the stored triple with the file
  bool rebuild_if_invalid = true; // otherwise an invalid index is an error
};

class SeqReader final : public FrameReader {
 public:
  explicit SeqReader(const fs::path& path, IndexPolicy policy = {});
  std::uint64_t n_frames() const override { return index_.n_frames; }
  std::uint32_t n_atoms() const override { return index_.n_atoms; }
  void seek(std::uint64_t frame) override;
  void read_next(CoordFrame& out) override;
  void close() override;

  const OffsetIndex& index() const { return index_; }
  /// Frame the next read returns.
  std::uint64_t position() const { return next_; }
  /// Reads the next record without decoding the payload.
  std::pair<SeqRecordHeader, std::vector<std::uint8_t>> read_raw_next();

 private:
  fs::path path_;
  OffsetIndex index_;
  std::ifstream in_;
  std::uint64_t next_ = 0;
  std::vector<std::uint8_t> payload_;
};

// ---- DENSE --------------------------------------------------------------

struct DenseHeader {
  std::uint32_t magic = kDenseMagic;
  std::uint32_t version = kDenseVersion;
  std::uint64_t n_frames = 0;
  std::uint32_t n_atoms_stored = 0;
  std::uint64_t times_offset = kDenseHeaderBytes;
  std::uint64_t coords_offset = kDenseHeaderBytes;

  std::uint64_t frame_bytes() const { return 3ull * n_atoms_stored * 4ull; }
  std::uint64_t frame_offset(std::uint64_t i) const { return coords_offset + i * frame_bytes(); }
  std::uint64_t expected_file_size() const { return coords_offset + n_frames * frame_bytes(); }

  static DenseHeader for_shape(std::uint64_t n_frames, std::uint32_t n_atoms_stored);
  std::array<std::uint8_t, kDenseHeaderBytes> encode() const;
  static DenseHeader decode(std::span<const std::uint8_t, kDenseHeaderBytes> bytes);
};

/// Writes a DENSE file from frames already restricted to the stored atoms.
std::uint64_t dense_write(std::span<const CoordFrame> frames, const fs::path& path);
DenseHeader dense_read_header(const fs::path& path);
CoordFrame dense_read_frame(const fs::path& path, std::uint64_t i);

/// Positional reads with pread(); no shared file offset, no locking.
class DenseReader final : public FrameReader {
 public:
  explicit DenseReader(const fs::path& path);
  ~DenseReader() override;
  DenseReader(const DenseReader&) = delete;
  DenseReader& operator=(const DenseReader&) = delete;

  std::uint64_t n_frames() const override { return header_.n_frames; }
  std::uint32_t n_atoms() const override { return header_.n_atoms_stored; }
  void seek(std::uint64_t frame) override;
  void read_next(CoordFrame& out) override;
  void close() override;

  void read_frame(std::uint64_t i, CoordFrame& out);
  const DenseHeader& header() const { return header_; }

 private:
  fs::path path_;
  int fd_ = -1;
  DenseHeader header_;
  std::vector<float> times_;
  std::vector<float> buffer_;
  std::uint64_t next_ = 0;
};

// ---- derived layouts ----------------------------------------------------

struct SplitResult {
  std::vector<fs::path> segments;
  double wall_seconds = 0.0;
};

fs::path segment_path(const fs::path& out_dir, const fs::path& src, std::uint32_t k,
                      std::uint32_t n_segments);

/// Segment k receives the frames of decompose_blocks(T, n)[k], records copied
/// byte for byte. Each segment gets its own index.
SplitResult split_trajectory(const fs::path& src, std::uint32_t n_segments,
                             const fs::path& out_dir = {});

std::uint64_t convert_seq_to_dense(const fs::path& src, const System& system, const fs::path& dst);

struct ChainOptions {
  IndexPolicy index{};
};

/// Several SEQ segments presented as one trajectory. Every segment is opened
/// (and its index loaded) on construction.
class ChainReader final : public FrameReader {
 public:
  explicit ChainReader(std::vector<fs::path> paths, ChainOptions options = {});

  std::uint64_t n_frames() const override { return total_; }
  std::uint32_t n_atoms() const override { return n_atoms_; }
  void seek(std::uint64_t frame) override;
  void read_next(CoordFrame& out) override;
  void close() override;

  /// Global frame -> (segment, local frame).
  std::pair<std::size_t, std::uint64_t> locate(std::uint64_t global) const;
  std::size_t n_segments() const { return segments_.size(); }

 private:
  std::vector<std::unique_ptr<SeqReader>> segments_;
  std::vector<std::uint64_t> cumulative_;  // cumulative_[s] = first global frame of s
  std::uint64_t total_ = 0;
  std::uint32_t n_atoms_ = 0;
  std::size_t current_ = 0;
};

std::unique_ptr<ChainReader> chain_open(std::vector<fs::path> paths, ChainOptions options = {});

/// Frames held in memory; frames_[k] is global frame first_frame + k.
class MemoryReader final : public FrameReader {
 public:
  MemoryReader(std::vector<CoordFrame> frames, std::uint64_t first_frame,
               std::uint64_t n_frames_total, std::uint32_t n_atoms);
  std::uint64_t n_frames() const override { return total_; }
  std::uint32_t n_atoms() const override { return n_atoms_; }
  void seek(std::uint64_t frame) override;
  void read_next(CoordFrame& out) override;
  void close() override {}
  bool memory_resident() const override { return true; }

 private:
  std::vector<CoordFrame> frames_;
  std::uint64_t first_;
  std::uint64_t total_;
  std::uint32_t n_atoms_;
  std::uint64_t next_ = 0;
};

// ---- topology -----------------------------------------------------------

/// line 1: n_atoms; line 2: mobile indices; then "index name x y z" per mobile atom.
System read_topology(const fs::path& path);
void write_topology(const fs::path& path, const System& system);

}  // namespace trajbench
