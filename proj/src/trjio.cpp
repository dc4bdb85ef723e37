#include "trajbench/trjio.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "bytes.hpp"

namespace trajbench {
namespace {

using detail::ByteReader;
using detail::ByteWriter;

std::string errno_text() { return std::strerror(errno); }

std::ifstream open_in(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + ": " + errno_text());
  return in;
}

bool read_exact(std::istream& in, std::uint8_t* dst, std::size_t n) {
  in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
  return static_cast<std::size_t>(in.gcount()) == n;
}

void write_bytes(std::ostream& out, std::span<const std::uint8_t> b, const fs::path& path) {
  out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
  if (!out) throw IoError("write failed on " + path.string());
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw std::runtime_error("cannot format number");
  return std::string(buf, end);
}

}  // namespace

// ---- codec --------------------------------------------------------------

void append_varint(std::vector<std::uint8_t>& out, std::uint64_t v) {
  while (v >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(v | 0x80));
    v >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(v));
}

std::uint64_t read_varint(std::span<const std::uint8_t> in, std::size_t& pos) {
  std::uint64_t v = 0;
  for (int shift = 0; shift < 64; shift += 7) {
    if (pos >= in.size()) throw FormatError("truncated varint", pos);
    const std::uint8_t byte = in[pos++];
    if (shift == 63 && byte > 1) throw FormatError("overlong varint", pos - 1);
    v |= static_cast<std::uint64_t>(byte & 0x7F) << shift;
    if (!(byte & 0x80)) return v;
  }
  throw FormatError("overlong varint", pos);
}

double quantize(double coord, float precision) {
  const double p = static_cast<double>(precision);
  return static_cast<double>(std::llround(coord * p)) / p;
}

std::vector<std::uint8_t> encode_positions(std::span<const Vec3> positions, float precision) {
  if (!(precision > 0.0f)) throw std::invalid_argument("precision must be > 0");
  const double p = static_cast<double>(precision);
  constexpr double limit = 9007199254740992.0;  // 2^53
  std::vector<std::uint8_t> out;
  out.reserve(positions.size() * 6);
  std::int64_t prev[3] = {0, 0, 0};
  for (const auto& atom : positions) {
    for (int k = 0; k < 3; ++k) {
      const double scaled = atom[k] * p;
      if (!std::isfinite(scaled) || std::fabs(scaled) >= limit)
        throw std::invalid_argument("coordinate out of encodable range");
      const std::int64_t q = std::llround(scaled);
      append_varint(out, zigzag_encode(q - prev[k]));
      prev[k] = q;
    }
  }
  return out;
}

void decode_positions(std::span<const std::uint8_t> payload, float precision,
                      std::uint32_t n_atoms, std::vector<Vec3>& out) {
  const double p = static_cast<double>(precision);
  out.resize(n_atoms);
  std::size_t pos = 0;
  std::int64_t prev[3] = {0, 0, 0};
  for (std::uint32_t i = 0; i < n_atoms; ++i) {
    for (int k = 0; k < 3; ++k) {
      prev[k] += zigzag_decode(read_varint(payload, pos));
      out[i][k] = static_cast<double>(prev[k]) / p;
    }
  }
  if (pos != payload.size()) throw FormatError("trailing bytes in payload", pos);
}

// ---- SEQ record header -------------------------------------------------

std::array<std::uint8_t, kSeqHeaderBytes> SeqRecordHeader::encode() const {
  std::vector<std::uint8_t> buf;
  buf.reserve(kSeqHeaderBytes);
  ByteWriter w(buf);
  w.u32(magic);
  w.u64(frame_index);
  w.f32(time);
  for (float b : box) w.f32(b);
  w.f32(precision);
  w.u32(n_atoms);
  w.u32(payload_len);
  std::array<std::uint8_t, kSeqHeaderBytes> out{};
  std::copy(buf.begin(), buf.end(), out.begin());
  return out;
}

SeqRecordHeader SeqRecordHeader::decode(std::span<const std::uint8_t, kSeqHeaderBytes> bytes) {
  ByteReader r(bytes);
  SeqRecordHeader h;
  h.magic = r.u32();
  h.frame_index = r.u64();
  h.time = r.f32();
  for (float& b : h.box) b = r.f32();
  h.precision = r.f32();
  h.n_atoms = r.u32();
  h.payload_len = r.u32();
  return h;
}

// ---- SEQ writer ----------------------------------------------------------

SeqWriter::SeqWriter(const fs::path& path, float precision)
    : path_(path), out_(path, std::ios::binary | std::ios::trunc), precision_(precision) {
  if (!(precision > 0.0f)) throw std::invalid_argument("precision must be > 0");
  if (!out_) throw IoError("cannot create " + path.string() + ": " + errno_text());
}

void SeqWriter::write(const CoordFrame& frame) {
  const auto payload = encode_positions(frame.positions, precision_);
  SeqRecordHeader h;
  h.frame_index = frame.frame_index;
  h.time = static_cast<float>(frame.time);
  for (std::size_t k = 0; k < 9; ++k) h.box[k] = static_cast<float>(frame.box[k]);
  h.precision = precision_;
  h.n_atoms = static_cast<std::uint32_t>(frame.positions.size());
  h.payload_len = static_cast<std::uint32_t>(payload.size());
  write_raw(h, payload);
}

void SeqWriter::write_raw(const SeqRecordHeader& header, std::span<const std::uint8_t> payload) {
  if (n_atoms_ && *n_atoms_ != header.n_atoms)
    throw std::invalid_argument("inconsistent atom count: " + std::to_string(header.n_atoms) +
                                " after " + std::to_string(*n_atoms_));
  if (header.payload_len != payload.size())
    throw std::invalid_argument("payload length does not match header");
  n_atoms_ = header.n_atoms;
  const auto h = header.encode();
  write_bytes(out_, h, path_);
  write_bytes(out_, payload, path_);
  ++count_;
}

void SeqWriter::close() {
  if (out_.is_open()) {
    out_.close();
    if (out_.fail()) throw IoError("closing " + path_.string() + " failed");
  }
}

std::uint64_t seq_write(std::span<const CoordFrame> frames, float precision, const fs::path& path) {
  SeqWriter w(path, precision);
  for (const auto& f : frames) w.write(f);
  w.close();
  return w.frames_written();
}

// ---- offset index --------------------------------------------------------

fs::path index_path(const fs::path& trajectory) {
  fs::path p = trajectory;
  p += ".offidx";
  return p;
}

std::uint64_t file_mtime_seconds(const fs::path& path) {
  struct stat st {};
  if (::stat(path.c_str(), &st) != 0) throw IoError("stat " + path.string() + ": " + errno_text());
  return static_cast<std::uint64_t>(st.st_mtim.tv_sec);
}

OffsetIndex seq_scan_index(const fs::path& path) {
  auto in = open_in(path);
  OffsetIndex idx;
  idx.trajectory_file_size = fs::file_size(path);
  idx.trajectory_mtime = file_mtime_seconds(path);
  std::uint64_t pos = 0;
  std::array<std::uint8_t, kSeqHeaderBytes> buf{};
  while (pos < idx.trajectory_file_size) {
    if (idx.trajectory_file_size - pos < kSeqHeaderBytes)
      throw FormatError("truncated record header in " + path.string(), pos);
    in.seekg(static_cast<std::streamoff>(pos));
    if (!read_exact(in, buf.data(), buf.size()))
      throw FormatError("short read of record header in " + path.string(), pos);
    const auto h = SeqRecordHeader::decode(buf);
    if (h.magic != kSeqMagic) throw FormatError("bad record magic in " + path.string(), pos);
    if (!idx.offsets.empty() && h.n_atoms != idx.n_atoms)
      throw FormatError("atom count changes between records in " + path.string(), pos);
    const std::uint64_t end = pos + kSeqHeaderBytes + h.payload_len;
    if (end > idx.trajectory_file_size)
      throw FormatError("truncated record payload in " + path.string(), pos);
    idx.n_atoms = h.n_atoms;
    idx.offsets.push_back(pos);
    pos = end;
  }
  idx.n_frames = idx.offsets.size();
  return idx;
}

void write_index(const fs::path& sidecar, const OffsetIndex& index) {
  std::vector<std::uint8_t> buf;
  buf.reserve(kIndexHeaderBytes + 8 * index.offsets.size());
  ByteWriter w(buf);
  w.u64(index.n_frames);
  w.u32(index.n_atoms);
  w.u64(index.trajectory_file_size);
  w.u64(index.trajectory_mtime);
  for (auto o : index.offsets) w.u64(o);
  std::ofstream out(sidecar, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + sidecar.string() + ": " + errno_text());
  write_bytes(out, buf, sidecar);
}

std::optional<OffsetIndex> load_index(const fs::path& sidecar) {
  std::error_code ec;
  const auto size = fs::file_size(sidecar, ec);
  if (ec || size < kIndexHeaderBytes) return std::nullopt;
  std::ifstream in(sidecar, std::ios::binary);
  if (!in) return std::nullopt;
  std::vector<std::uint8_t> buf(size);
  if (!read_exact(in, buf.data(), buf.size())) return std::nullopt;
  ByteReader r(buf);
  OffsetIndex idx;
  idx.n_frames = r.u64();
  idx.n_atoms = r.u32();
  idx.trajectory_file_size = r.u64();
  idx.trajectory_mtime = r.u64();
  if (r.remaining() != idx.n_frames * 8) return std::nullopt;
  idx.offsets.resize(idx.n_frames);
  for (auto& o : idx.offsets) o = r.u64();
  return idx;
}

bool seq_validate_index(const fs::path& path, const OffsetIndex& index) {
  try {
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec) return false;
    if (size != index.trajectory_file_size) return false;
    if (file_mtime_seconds(path) != index.trajectory_mtime) return false;
    std::uint32_t atoms = 0;
    if (size >= kSeqHeaderBytes) {
      std::ifstream in(path, std::ios::binary);
      std::array<std::uint8_t, kSeqHeaderBytes> buf{};
      if (!read_exact(in, buf.data(), buf.size())) return false;
      atoms = SeqRecordHeader::decode(buf).n_atoms;
    }
    return atoms == index.n_atoms && index.offsets.size() == index.n_frames;
  } catch (...) {
    return false;
  }
}

OffsetIndex seq_build_index(const fs::path& path) {
  auto idx = seq_scan_index(path);
  write_index(index_path(path), idx);
  return idx;
}

OffsetIndex ensure_index(const fs::path& path) {
  if (auto idx = load_index(index_path(path)); idx && seq_validate_index(path, *idx)) return *idx;
  return seq_build_index(path);
}

CoordFrame seq_read_frame(const fs::path& path, const OffsetIndex& index, std::uint64_t i) {
  if (i >= index.n_frames)
    throw std::out_of_range("frame " + std::to_string(i) + " out of range [0, " +
                            std::to_string(index.n_frames) + ")");
  auto in = open_in(path);
  in.seekg(static_cast<std::streamoff>(index.offsets[i]));
  std::array<std::uint8_t, kSeqHeaderBytes> buf{};
  if (!read_exact(in, buf.data(), buf.size()))
    throw FormatError("short read of record header", index.offsets[i]);
  const auto h = SeqRecordHeader::decode(buf);
  if (h.magic != kSeqMagic) throw FormatError("bad record magic", index.offsets[i]);
  std::vector<std::uint8_t> payload(h.payload_len);
  if (!read_exact(in, payload.data(), payload.size()))
    throw FormatError("truncated payload", index.offsets[i] + kSeqHeaderBytes);
  CoordFrame f;
  f.frame_index = h.frame_index;
  f.time = h.time;
  for (std::size_t k = 0; k < 9; ++k) f.box[k] = h.box[k];
  decode_positions(payload, h.precision, h.n_atoms, f.positions);
  return f;
}

std::vector<CoordFrame> seq_read_all(const fs::path& path) {
  auto in = open_in(path);
  const auto size = fs::file_size(path);
  std::vector<CoordFrame> frames;
  std::uint64_t pos = 0;
  std::array<std::uint8_t, kSeqHeaderBytes> buf{};
  std::vector<std::uint8_t> payload;
  while (pos < size) {
    if (!read_exact(in, buf.data(), buf.size())) throw FormatError("truncated record header", pos);
    const auto h = SeqRecordHeader::decode(buf);
    if (h.magic != kSeqMagic) throw FormatError("bad record magic", pos);
    payload.resize(h.payload_len);
    if (!read_exact(in, payload.data(), payload.size()))
      throw FormatError("truncated record payload", pos);
    CoordFrame f;
    f.frame_index = h.frame_index;
    f.time = h.time;
    for (std::size_t k = 0; k < 9; ++k) f.box[k] = h.box[k];
    decode_positions(payload, h.precision, h.n_atoms, f.positions);
    frames.push_back(std::move(f));
    pos += kSeqHeaderBytes + h.payload_len;
  }
  return frames;
}

// ---- SEQ reader ----------------------------------------------------------

SeqReader::SeqReader(const fs::path& path, IndexPolicy policy) : path_(path) {
  auto loaded = load_index(index_path(path));
  const bool usable = loaded && (!policy.validate || seq_validate_index(path, *loaded));
  if (usable) {
    index_ = std::move(*loaded);
  } else if (policy.rebuild_if_invalid) {
    index_ = seq_build_index(path);
  } else {
    throw IoError("missing or stale offset index for " + path.string());
  }
  in_ = open_in(path);
}

void SeqReader::seek(std::uint64_t frame) {
  if (frame > index_.n_frames)
    throw std::out_of_range("seek to frame " + std::to_string(frame) + " beyond " +
                            std::to_string(index_.n_frames));
  if (frame < index_.n_frames) {
    in_.clear();
    in_.seekg(static_cast<std::streamoff>(index_.offsets[frame]));
  }
  next_ = frame;
}

std::pair<SeqRecordHeader, std::vector<std::uint8_t>> SeqReader::read_raw_next() {
  if (next_ >= index_.n_frames)
    throw std::out_of_range("read past end of " + path_.string());
  const std::uint64_t at = index_.offsets[next_];
  std::array<std::uint8_t, kSeqHeaderBytes> buf{};
  if (!read_exact(in_, buf.data(), buf.size())) throw FormatError("truncated record header", at);
  auto h = SeqRecordHeader::decode(buf);
  if (h.magic != kSeqMagic) throw FormatError("bad record magic", at);
  std::vector<std::uint8_t> payload(h.payload_len);
  if (!read_exact(in_, payload.data(), payload.size()))
    throw FormatError("truncated record payload", at);
  ++next_;
  return {h, std::move(payload)};
}

void SeqReader::read_next(CoordFrame& out) {
  if (next_ >= index_.n_frames)
    throw std::out_of_range("read past end of " + path_.string());
  const std::uint64_t at = index_.offsets[next_];
  std::array<std::uint8_t, kSeqHeaderBytes> buf{};
  if (!read_exact(in_, buf.data(), buf.size())) throw FormatError("truncated record header", at);
  const auto h = SeqRecordHeader::decode(buf);
  if (h.magic != kSeqMagic) throw FormatError("bad record magic", at);
  if (h.n_atoms != index_.n_atoms) throw FormatError("atom count differs from index", at);
  payload_.resize(h.payload_len);
  if (!read_exact(in_, payload_.data(), payload_.size()))
    throw FormatError("truncated record payload", at);
  out.frame_index = h.frame_index;
  out.time = h.time;
  for (std::size_t k = 0; k < 9; ++k) out.box[k] = h.box[k];
  decode_positions(payload_, h.precision, h.n_atoms, out.positions);
  ++next_;
}

void SeqReader::close() {
  if (in_.is_open()) in_.close();
}

// ---- DENSE -----------------------------------------------------------------

DenseHeader DenseHeader::for_shape(std::uint64_t n_frames, std::uint32_t n_atoms_stored) {
  DenseHeader h;
  h.n_frames = n_frames;
  h.n_atoms_stored = n_atoms_stored;
  h.times_offset = kDenseHeaderBytes;
  h.coords_offset = kDenseHeaderBytes + 4 * n_frames;
  return h;
}

std::array<std::uint8_t, kDenseHeaderBytes> DenseHeader::encode() const {
  std::vector<std::uint8_t> buf;
  ByteWriter w(buf);
  w.u32(magic);
  w.u32(version);
  w.u64(n_frames);
  w.u32(n_atoms_stored);
  w.u64(times_offset);
  w.u64(coords_offset);
  std::array<std::uint8_t, kDenseHeaderBytes> out{};
  std::copy(buf.begin(), buf.end(), out.begin());
  return out;
}

DenseHeader DenseHeader::decode(std::span<const std::uint8_t, kDenseHeaderBytes> bytes) {
  ByteReader r(bytes);
  DenseHeader h;
  h.magic = r.u32();
  h.version = r.u32();
  h.n_frames = r.u64();
  h.n_atoms_stored = r.u32();
  h.times_offset = r.u64();
  h.coords_offset = r.u64();
  return h;
}

std::uint64_t dense_write(std::span<const CoordFrame> frames, const fs::path& path) {
  const std::uint32_t n = frames.empty() ? 0 : static_cast<std::uint32_t>(frames[0].positions.size());
  const auto header = DenseHeader::for_shape(frames.size(), n);
  std::vector<std::uint8_t> buf;
  buf.reserve(header.expected_file_size());
  ByteWriter w(buf);
  const auto h = header.encode();
  w.bytes(h);
  for (const auto& f : frames) w.f32(static_cast<float>(f.time));
  for (const auto& f : frames) {
    if (f.positions.size() != n) throw std::invalid_argument("inconsistent atom counts");
    for (const auto& p : f.positions)
      for (double c : p) w.f32(static_cast<float>(c));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string() + ": " + errno_text());
  write_bytes(out, buf, path);
  return frames.size();
}

DenseHeader dense_read_header(const fs::path& path) {
  auto in = open_in(path);
  std::array<std::uint8_t, kDenseHeaderBytes> buf{};
  if (!read_exact(in, buf.data(), buf.size())) throw FormatError("truncated dense header", 0);
  const auto h = DenseHeader::decode(buf);
  if (h.magic != kDenseMagic) throw FormatError("bad dense magic in " + path.string(), 0);
  if (h.version != kDenseVersion) throw FormatError("unsupported dense version", 4);
  if (fs::file_size(path) != h.expected_file_size())
    throw FormatError("dense file size does not match header", fs::file_size(path));
  return h;
}

CoordFrame dense_read_frame(const fs::path& path, std::uint64_t i) {
  DenseReader r(path);
  CoordFrame f;
  r.read_frame(i, f);
  return f;
}

namespace {

void pread_exact(int fd, void* dst, std::size_t n, std::uint64_t offset, const fs::path& path) {
  auto* p = static_cast<std::uint8_t*>(dst);
  std::size_t done = 0;
  while (done < n) {
    const ssize_t got = ::pread(fd, p + done, n - done, static_cast<off_t>(offset + done));
    if (got < 0) {
      if (errno == EINTR) continue;
      throw IoError("pread " + path.string() + ": " + errno_text());
    }
    if (got == 0) throw FormatError("unexpected end of " + path.string(), offset + done);
    done += static_cast<std::size_t>(got);
  }
}

float load_f32(const std::uint8_t* p) {
  return std::bit_cast<float>(detail::load_le<std::uint32_t>(p));
}

}  // namespace

DenseReader::DenseReader(const fs::path& path) : path_(path), header_(dense_read_header(path)) {
  fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd_ < 0) throw IoError("cannot open " + path.string() + ": " + errno_text());
  std::vector<std::uint8_t> raw(4 * header_.n_frames);
  pread_exact(fd_, raw.data(), raw.size(), header_.times_offset, path_);
  times_.resize(header_.n_frames);
  for (std::size_t i = 0; i < times_.size(); ++i) times_[i] = load_f32(raw.data() + 4 * i);
  buffer_.resize(3ull * header_.n_atoms_stored);
}

DenseReader::~DenseReader() { close(); }

void DenseReader::seek(std::uint64_t frame) {
  if (frame > header_.n_frames) throw std::out_of_range("seek beyond end of dense file");
  next_ = frame;
}

void DenseReader::read_next(CoordFrame& out) { read_frame(next_++, out); }

void DenseReader::read_frame(std::uint64_t i, CoordFrame& out) {
  if (i >= header_.n_frames)
    throw std::out_of_range("frame " + std::to_string(i) + " out of range [0, " +
                            std::to_string(header_.n_frames) + ")");
  if (fd_ < 0) throw IoError("dense reader is closed");
  pread_exact(fd_, buffer_.data(), header_.frame_bytes(), header_.frame_offset(i), path_);
  if constexpr (std::endian::native == std::endian::big) {
    for (float& v : buffer_) {
      std::uint8_t b[4];
      std::memcpy(b, &v, 4);
      v = load_f32(b);
    }
  }
  out.frame_index = i;
  out.time = times_[i];
  out.box = Box{};
  out.positions.resize(header_.n_atoms_stored);
  for (std::size_t a = 0; a < out.positions.size(); ++a)
    out.positions[a] = {buffer_[3 * a], buffer_[3 * a + 1], buffer_[3 * a + 2]};
}

void DenseReader::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

// ---- split / convert ---------------------------------------------------------

fs::path segment_path(const fs::path& out_dir, const fs::path& src, std::uint32_t k,
                      std::uint32_t n_segments) {
  char suffix[48];
  std::snprintf(suffix, sizeof suffix, ".seg%03uof%03u", k, n_segments);
  const fs::path dir = out_dir.empty() ? src.parent_path() : out_dir;
  return dir / (src.filename().string() + suffix);
}

SplitResult split_trajectory(const fs::path& src, std::uint32_t n_segments, const fs::path& out_dir) {
  if (n_segments < 1) throw std::invalid_argument("split_trajectory: n_segments must be >= 1");
  const auto begin = std::chrono::steady_clock::now();
  SeqReader reader(src);
  if (!out_dir.empty()) fs::create_directories(out_dir);
  SplitResult result;
  for (const auto& block : decompose_blocks(reader.n_frames(), n_segments)) {
    const auto seg = segment_path(out_dir, src, block.rank, n_segments);
    SeqWriter writer(seg);
    if (block.size() > 0) reader.seek(block.start);
    for (auto f = block.start; f < block.stop; ++f) {
      auto [header, payload] = reader.read_raw_next();
      writer.write_raw(header, payload);
    }
    writer.close();
    seq_build_index(seg);
    result.segments.push_back(seg);
  }
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();
  return result;
}

std::uint64_t convert_seq_to_dense(const fs::path& src, const System& system, const fs::path& dst) {
  system.validate();
  SeqReader reader(src);
  const std::uint64_t t = reader.n_frames();
  if (t > 0 && reader.n_atoms() != system.n_atoms)
    throw std::invalid_argument("topology has " + std::to_string(system.n_atoms) +
                                " atoms, trajectory has " + std::to_string(reader.n_atoms()));
  const auto m = static_cast<std::uint32_t>(system.mobile_count());
  const auto header = DenseHeader::for_shape(t, t > 0 ? m : 0);
  {
    std::ofstream create(dst, std::ios::binary | std::ios::trunc);
    if (!create) throw IoError("cannot create " + dst.string() + ": " + errno_text());
    const auto h = header.encode();
    write_bytes(create, h, dst);
  }
  fs::resize_file(dst, header.expected_file_size());
  std::fstream out(dst, std::ios::binary | std::ios::in | std::ios::out);
  if (!out) throw IoError("cannot reopen " + dst.string());

  CoordFrame frame;
  std::vector<std::uint8_t> row;
  for (std::uint64_t i = 0; i < t; ++i) {
    reader.read_next(frame);
    row.clear();
    ByteWriter w(row);
    w.f32(static_cast<float>(frame.time));
    out.seekp(static_cast<std::streamoff>(header.times_offset + 4 * i));
    write_bytes(out, row, dst);
    row.clear();
    for (std::uint32_t idx : system.mobile_indices)
      for (double c : frame.positions[idx]) w.f32(static_cast<float>(c));
    out.seekp(static_cast<std::streamoff>(header.frame_offset(i)));
    write_bytes(out, row, dst);
  }
  out.close();
  if (out.fail()) throw IoError("closing " + dst.string() + " failed");
  return t;
}

// ---- chain ---------------------------------------------------------------------

ChainReader::ChainReader(std::vector<fs::path> paths, ChainOptions options) {
  if (paths.empty()) throw std::invalid_argument("chain needs at least one segment");
  std::optional<std::uint32_t> atoms;
  for (const auto& p : paths) {
    auto seg = std::make_unique<SeqReader>(p, options.index);
    if (seg->n_frames() > 0) {
      if (atoms && *atoms != seg->n_atoms())
        throw std::invalid_argument("segment " + p.string() + " has " +
                                    std::to_string(seg->n_atoms()) + " atoms, expected " +
                                    std::to_string(*atoms));
      atoms = seg->n_atoms();
    }
    cumulative_.push_back(total_);
    total_ += seg->n_frames();
    segments_.push_back(std::move(seg));
  }
  n_atoms_ = atoms.value_or(0);
}

std::pair<std::size_t, std::uint64_t> ChainReader::locate(std::uint64_t global) const {
  if (global >= total_)
    throw std::out_of_range("frame " + std::to_string(global) + " beyond chain length " +
                            std::to_string(total_));
  const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), global);
  const auto s = static_cast<std::size_t>(std::distance(cumulative_.begin(), it) - 1);
  return {s, global - cumulative_[s]};
}

void ChainReader::seek(std::uint64_t frame) {
  if (frame == total_) {
    current_ = segments_.size();
    return;
  }
  const auto [s, local] = locate(frame);
  segments_[s]->seek(local);
  current_ = s;
}

void ChainReader::read_next(CoordFrame& out) {
  while (current_ < segments_.size()) {
    auto& seg = *segments_[current_];
    if (seg.position() < seg.n_frames()) {
      seg.read_next(out);
      return;
    }
    if (++current_ < segments_.size()) segments_[current_]->seek(0);
  }
  throw std::out_of_range("read past end of chain");
}

void ChainReader::close() {
  for (auto& s : segments_) s->close();
}

std::unique_ptr<ChainReader> chain_open(std::vector<fs::path> paths, ChainOptions options) {
  return std::make_unique<ChainReader>(std::move(paths), options);
}

// ---- memory ----------------------------------------------------------------------

MemoryReader::MemoryReader(std::vector<CoordFrame> frames, std::uint64_t first_frame,
                           std::uint64_t n_frames_total, std::uint32_t n_atoms)
    : frames_(std::move(frames)), first_(first_frame), total_(n_frames_total), n_atoms_(n_atoms) {
  if (first_ + frames_.size() > total_)
    throw std::invalid_argument("memory frames exceed declared trajectory length");
}

void MemoryReader::seek(std::uint64_t frame) {
  if (frame < first_ || frame > first_ + frames_.size())
    throw std::out_of_range("frame " + std::to_string(frame) + " not resident");
  next_ = frame;
}

void MemoryReader::read_next(CoordFrame& out) {
  if (next_ < first_ || next_ >= first_ + frames_.size())
    throw std::out_of_range("frame " + std::to_string(next_) + " not resident");
  out = frames_[next_ - first_];
  ++next_;
}

// ---- topology ----------------------------------------------------------------------

System read_topology(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open topology " + path.string());
  System sys;
  std::string line;
  auto bad = [&](const std::string& what) {
    return std::invalid_argument("topology " + path.string() + ": " + what);
  };
  if (!std::getline(in, line)) throw bad("missing atom count");
  {
    std::istringstream ls(line);
    long long n = -1;
    if (!(ls >> n) || n < 0) throw bad("invalid atom count");
    sys.n_atoms = static_cast<std::uint32_t>(n);
  }
  if (!std::getline(in, line)) throw bad("missing mobile index line");
  {
    std::istringstream ls(line);
    long long idx;
    while (ls >> idx) {
      if (idx < 0) throw bad("negative mobile index");
      sys.mobile_indices.push_back(static_cast<std::uint32_t>(idx));
    }
    if (!ls.eof()) throw bad("malformed mobile index line");
  }
  for (std::size_t k = 0; k < sys.mobile_indices.size(); ++k) {
    do {
      if (!std::getline(in, line)) throw bad("missing reference row " + std::to_string(k));
    } while (line.find_first_not_of(" \t\r") == std::string::npos);
    std::istringstream ls(line);
    long long idx;
    std::string name;
    Vec3 x{};
    if (!(ls >> idx >> name >> x[0] >> x[1] >> x[2])) throw bad("malformed reference row " + std::to_string(k));
    if (idx != static_cast<long long>(sys.mobile_indices[k]))
      throw bad("reference row " + std::to_string(k) + " index does not match selection");
    sys.atom_names.push_back(name);
    sys.reference_positions.push_back(x);
  }
  sys.validate();
  return sys;
}

void write_topology(const fs::path& path, const System& system) {
  system.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create topology " + path.string());
  out << system.n_atoms << '\n';
  for (std::size_t k = 0; k < system.mobile_indices.size(); ++k)
    out << (k ? " " : "") << system.mobile_indices[k];
  out << '\n';
  for (std::size_t k = 0; k < system.mobile_indices.size(); ++k) {
    const std::string name = k < system.atom_names.size() ? system.atom_names[k] : "X";
    const auto& r = system.reference_positions[k];
    out << system.mobile_indices[k] << ' ' << name << ' ' << format_double(r[0]) << ' '
        << format_double(r[1]) << ' ' << format_double(r[2]) << '\n';
  }
  if (!out) throw IoError("write failed on " + path.string());
}

}  // namespace trajbench
