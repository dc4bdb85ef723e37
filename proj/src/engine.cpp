#include "trajbench/engine.hpp"

#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <numeric>

#include "bytes.hpp"

namespace trajbench {
namespace {

using detail::ByteReader;
using detail::ByteWriter;
using steady = std::chrono::steady_clock;

double steady_seconds() {
  return std::chrono::duration<double>(steady::now().time_since_epoch()).count();
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

constexpr std::size_t kMaxMessageBytes = std::size_t{1} << 31;

}  // namespace

// ---- config ---------------------------------------------------------------

void StrategyConfig::validate() const {
  if (n_workers < 1) throw std::invalid_argument("n_workers must be >= 1");
  if (workload_factor < 1) throw std::invalid_argument("workload factor must be >= 1");
  if (timeout_seconds <= 0) throw std::invalid_argument("timeout must be positive");
  switch (strategy) {
    case Strategy::shared_seq:
    case Strategy::dense_parallel:
      if (trajectory_paths.size() != 1)
        throw std::invalid_argument(std::string(to_string(strategy)) +
                                    " takes exactly one trajectory file");
      break;
    case Strategy::subfile:
      if (trajectory_paths.size() != n_workers)
        throw std::invalid_argument("subfile needs one segment per worker (" +
                                    std::to_string(trajectory_paths.size()) + " segments, " +
                                    std::to_string(n_workers) + " workers)");
      break;
    case Strategy::chain:
      if (trajectory_paths.empty()) throw std::invalid_argument("chain needs at least one segment");
      break;
    case Strategy::in_memory:
      if (topology_path.empty() && (n_atoms == 0 || n_mobile == 0))
        throw std::invalid_argument("in_memory needs frame and atom counts");
      if (topology_path.empty() && n_mobile > n_atoms)
        throw std::invalid_argument("more mobile atoms than atoms");
      break;
  }
  if (strategy != Strategy::in_memory && topology_path.empty())
    throw std::invalid_argument("a topology file is required for file-backed strategies");
}

// ---- wire -------------------------------------------------------------------

std::vector<std::uint8_t> encode_message(const GatherMessage& msg) {
  std::vector<std::uint8_t> body;
  body.reserve(128 + 16 * msg.rmsd.size() + msg.error.size());
  ByteWriter w(body);
  w.u32(msg.rank);
  w.u64(msg.start);
  w.u64(msg.stop);
  w.u64(msg.rmsd.size());
  for (double v : msg.rmsd) w.f64(v);
  w.u64(msg.times.size());
  for (double v : msg.times) w.f64(v);
  const RankTiming& t = msg.timing;
  w.u32(t.rank);
  for (double v : {t.t_opening_trajectory, t.t_io, t.t_comp, t.t_end_loop, t.t_all_frame, t.t_rmsd,
                   t.t_comm, t.t_overhead1, t.t_overhead2, t.t_n})
    w.f64(v);
  w.u64(t.n_frames_processed);
  w.f64(msg.sent_at);
  w.i32(msg.status);
  w.u32(static_cast<std::uint32_t>(msg.error.size()));
  w.bytes({reinterpret_cast<const std::uint8_t*>(msg.error.data()), msg.error.size()});

  std::vector<std::uint8_t> frame;
  frame.reserve(body.size() + 8);
  ByteWriter f(frame);
  f.u32(static_cast<std::uint32_t>(body.size() + 4));
  f.bytes(body);
  f.u32(crc32_of(body));
  return frame;
}

std::optional<std::size_t> message_frame_size(std::span<const std::uint8_t> buffer) {
  if (buffer.size() < 4) return std::nullopt;
  const auto len = detail::load_le<std::uint32_t>(buffer.data());
  if (len < 4 || len > kMaxMessageBytes) throw WireError("implausible message length");
  return std::size_t{4} + len;
}

GatherMessage decode_message(std::span<const std::uint8_t> frame) {
  const auto size = message_frame_size(frame);
  if (!size || frame.size() != *size) throw WireError("incomplete or oversized message frame");
  const auto body = frame.subspan(4, *size - 8);
  const auto stored_crc = detail::load_le<std::uint32_t>(frame.data() + *size - 4);
  if (crc32_of(body) != stored_crc) throw WireError("message checksum mismatch");
  try {
    ByteReader r(body);
    GatherMessage m;
    m.rank = r.u32();
    m.start = r.u64();
    m.stop = r.u64();
    auto read_array = [&](std::vector<double>& out) {
      const auto n = r.u64();
      if (n > r.remaining() / 8) throw WireError("array length exceeds message");
      out.resize(n);
      for (auto& v : out) v = r.f64();
    };
    read_array(m.rmsd);
    read_array(m.times);
    RankTiming& t = m.timing;
    t.rank = r.u32();
    for (double* v : {&t.t_opening_trajectory, &t.t_io, &t.t_comp, &t.t_end_loop, &t.t_all_frame,
                      &t.t_rmsd, &t.t_comm, &t.t_overhead1, &t.t_overhead2, &t.t_n})
      *v = r.f64();
    t.n_frames_processed = r.u64();
    m.sent_at = r.f64();
    m.status = r.i32();
    const auto n = r.u32();
    const auto err = r.bytes(n);
    m.error.assign(err.begin(), err.end());
    if (r.remaining() != 0) throw WireError("trailing bytes in message");
    if (m.status == 0 && (m.rmsd.size() != m.stop - m.start || m.times.size() != m.rmsd.size()))
      throw WireError("array lengths do not match block size");
    return m;
  } catch (const std::out_of_range& e) {
    throw WireError(std::string("truncated message: ") + e.what());
  }
}

// ---- synthetic data -----------------------------------------------------------

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace

CoordFrame synthetic_frame(std::uint64_t seed, std::uint64_t frame_index, std::uint32_t n_atoms) {
  std::uint64_t state = seed;
  state = splitmix64(state) ^ (frame_index * 0xD1B54A32D192ED03ull);
  CoordFrame f;
  f.frame_index = frame_index;
  f.time = static_cast<double>(frame_index) * kSyntheticTimestepPs;
  f.box = {kSyntheticBoxNm, 0, 0, 0, kSyntheticBoxNm, 0, 0, 0, kSyntheticBoxNm};
  f.positions.resize(n_atoms);
  for (auto& p : f.positions)
    for (double& c : p)
      c = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * kSyntheticBoxNm;
  return f;
}

System synthetic_system(std::uint64_t seed, std::uint32_t n_atoms, std::uint32_t n_mobile,
                        std::optional<TrajFormat> stored_as, float precision) {
  if (n_mobile > n_atoms) throw std::invalid_argument("more mobile atoms than atoms");
  const auto frame0 = synthetic_frame(seed, 0, n_atoms);
  System sys;
  sys.n_atoms = n_atoms;
  for (std::uint32_t k = 0; k < n_mobile; ++k) {
    const auto idx = static_cast<std::uint32_t>((static_cast<std::uint64_t>(k) * n_atoms) / n_mobile);
    sys.mobile_indices.push_back(idx);
    sys.atom_names.emplace_back("CA");
    Vec3 r = frame0.positions[idx];
    if (stored_as) {
      for (double& c : r) {
        c = quantize(c, precision);
        if (*stored_as == TrajFormat::dense) c = static_cast<float>(c);
      }
    }
    sys.reference_positions.push_back(r);
  }
  return sys;
}

GeneratedTrajectory generate_synthetic(std::uint64_t n_frames, std::uint32_t n_atoms,
                                       std::uint64_t seed, const fs::path& path, TrajFormat format,
                                       float precision, std::optional<std::uint32_t> n_mobile) {
  const std::uint32_t m = n_mobile.value_or(std::min<std::uint32_t>(146, n_atoms));
  GeneratedTrajectory out;
  out.system = synthetic_system(seed, n_atoms, m, format, precision);
  if (format == TrajFormat::seq) {
    SeqWriter w(path, precision);
    for (std::uint64_t i = 0; i < n_frames; ++i) w.write(synthetic_frame(seed, i, n_atoms));
    w.close();
    out.frames = w.frames_written();
    return out;
  }

  // DENSE: the selected atoms only, values rounded like the SEQ codec.
  const auto header = DenseHeader::for_shape(n_frames, n_frames > 0 ? m : 0);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot create " + path.string());
  std::vector<std::uint8_t> buf;
  ByteWriter w(buf);
  const auto h = header.encode();
  w.bytes(h);
  for (std::uint64_t i = 0; i < n_frames; ++i)
    w.f32(static_cast<float>(static_cast<double>(i) * kSyntheticTimestepPs));
  auto flush = [&] {
    file.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!file) throw IoError("write failed on " + path.string());
    buf.clear();
  };
  flush();
  for (std::uint64_t i = 0; i < n_frames; ++i) {
    const auto f = synthetic_frame(seed, i, n_atoms);
    for (auto idx : out.system.mobile_indices)
      for (double c : f.positions[idx]) w.f32(static_cast<float>(quantize(c, precision)));
    if (buf.size() > (1u << 20)) flush();
  }
  flush();
  file.close();
  out.frames = n_frames;
  return out;
}

// ---- strategy plumbing ----------------------------------------------------------

System load_system(const StrategyConfig& config) {
  if (!config.topology_path.empty()) return read_topology(config.topology_path);
  return synthetic_system(config.seed, config.n_atoms, config.n_mobile);
}

namespace {

struct Plan {
  System system;
  std::vector<std::uint32_t> selection;  // indices into frames the reader yields
  std::uint64_t n_frames = 0;
  std::vector<std::uint64_t> segment_lengths;  // subfile / chain
};

Plan prepare(const StrategyConfig& config) {
  config.validate();
  Plan plan;
  plan.system = load_system(config);
  plan.selection = plan.system.mobile_indices;
  switch (config.strategy) {
    case Strategy::shared_seq: {
      const auto idx = ensure_index(config.trajectory_paths[0]);
      plan.n_frames = idx.n_frames;
      break;
    }
    case Strategy::subfile:
    case Strategy::chain:
      for (const auto& p : config.trajectory_paths) {
        const auto idx = ensure_index(p);
        plan.segment_lengths.push_back(idx.n_frames);
        plan.n_frames += idx.n_frames;
      }
      break;
    case Strategy::dense_parallel: {
      const auto h = dense_read_header(config.trajectory_paths[0]);
      if (h.n_frames > 0 && h.n_atoms_stored != plan.system.mobile_count())
        throw std::invalid_argument("dense file stores " + std::to_string(h.n_atoms_stored) +
                                    " atoms, topology selects " +
                                    std::to_string(plan.system.mobile_count()));
      plan.n_frames = h.n_frames;
      plan.selection.resize(plan.system.mobile_count());
      std::iota(plan.selection.begin(), plan.selection.end(), 0u);
      break;
    }
    case Strategy::in_memory:
      plan.n_frames = config.n_frames;
      break;
  }
  return plan;
}

struct RankWork {
  BlockAssignment global;  // frames of the full trajectory
  BlockAssignment local;   // frames as the opened reader numbers them
  TrajectoryOpener open;
};

RankWork make_rank_work(const StrategyConfig& config, const Plan& plan, std::uint32_t rank,
                        std::uint32_t n_ranks) {
  RankWork work;
  const IndexPolicy pre_built{true, false};
  if (config.strategy == Strategy::subfile && n_ranks > 1) {
    std::uint64_t start = 0;
    for (std::uint32_t k = 0; k < rank; ++k) start += plan.segment_lengths[k];
    work.global = {rank, start, start + plan.segment_lengths[rank]};
    work.local = {rank, 0, plan.segment_lengths[rank]};
    const auto path = config.trajectory_paths[rank];
    work.open = [path, pre_built] { return std::make_unique<SeqReader>(path, pre_built); };
    return work;
  }

  work.global = decompose_blocks(plan.n_frames, n_ranks)[rank];
  work.local = work.global;
  switch (config.strategy) {
    case Strategy::shared_seq: {
      const auto path = config.trajectory_paths[0];
      work.open = [path, pre_built] { return std::make_unique<SeqReader>(path, pre_built); };
      break;
    }
    case Strategy::subfile:  // serial pass over all segments
    case Strategy::chain: {
      const auto paths = config.trajectory_paths;
      const ChainOptions opts{IndexPolicy{config.validate_chain_index, false}};
      work.open = [paths, opts] { return chain_open(paths, opts); };
      break;
    }
    case Strategy::dense_parallel: {
      const auto path = config.trajectory_paths[0];
      work.open = [path] { return std::make_unique<DenseReader>(path); };
      break;
    }
    case Strategy::in_memory: {
      // Generated before any timing starts.
      auto frames = std::make_shared<std::vector<CoordFrame>>();
      frames->reserve(work.global.size());
      for (auto f = work.global.start; f < work.global.stop; ++f)
        frames->push_back(synthetic_frame(config.seed, f, plan.system.n_atoms));
      const auto first = work.global.start;
      const auto total = plan.n_frames;
      const auto atoms = plan.system.n_atoms;
      work.open = [frames, first, total, atoms] {
        return std::make_unique<MemoryReader>(std::move(*frames), first, total, atoms);
      };
      break;
    }
  }
  return work;
}

GatherMessage execute_rank(const StrategyConfig& config, const Plan& plan, std::uint32_t rank,
                           std::uint32_t n_ranks) {
  auto work = make_rank_work(config, plan, rank, n_ranks);
  auto out = block_rmsd(work.open, plan.selection, plan.system.reference_positions, work.local,
                        config.workload_factor);
  GatherMessage msg;
  msg.rank = rank;
  msg.start = work.global.start;
  msg.stop = work.global.stop;
  msg.rmsd.reserve(out.results.size());
  msg.times.reserve(out.results.size());
  for (const auto& r : out.results) {
    msg.rmsd.push_back(r.rmsd);
    msg.times.push_back(r.time);
  }
  msg.timing = out.timing;
  msg.timing.rank = rank;
  return msg;
}

void check_identities(const std::vector<RankTiming>& timings) {
  for (const auto& t : timings)
    if (!t.identities_hold())
      throw std::logic_error("timing identities violated for rank " + std::to_string(t.rank));
}

// ---- worker process side --------------------------------------------------------

bool write_all(int fd, std::span<const std::uint8_t> data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    done += static_cast<std::size_t>(n);
  }
  return true;
}

[[noreturn]] void worker_main(const StrategyConfig& config, const Plan& plan, std::uint32_t rank,
                              int result_fd, int ack_fd) {
  ::signal(SIGPIPE, SIG_IGN);
  GatherMessage msg;
  try {
    msg = execute_rank(config, plan, rank, config.n_workers);
  } catch (const std::exception& e) {
    msg = GatherMessage{};
    msg.rank = rank;
    msg.status = 2;
    msg.error = e.what();
  } catch (...) {
    msg = GatherMessage{};
    msg.rank = rank;
    msg.status = 2;
    msg.error = "unknown failure";
  }
  msg.sent_at = steady_seconds();
  const auto bytes = encode_message(msg);
  if (!write_all(result_fd, bytes)) ::_exit(3);
  ::close(result_fd);
  std::uint8_t ack = 0;
  while (::read(ack_fd, &ack, 1) < 0 && errno == EINTR) {
  }
  ::_exit(0);
}

// ---- orchestrator side ------------------------------------------------------------

struct Child {
  pid_t pid = -1;
  int result_fd = -1;
  int ack_fd = -1;
  std::vector<std::uint8_t> buffer;
  bool done = false;
};

std::string describe_status(int status) {
  if (WIFEXITED(status)) return "exited with code " + std::to_string(WEXITSTATUS(status));
  if (WIFSIGNALED(status)) return "killed by signal " + std::to_string(WTERMSIG(status));
  return "ended abnormally";
}

void reap_all(std::vector<Child>& children, bool kill_first) {
  for (auto& c : children) {
    if (c.result_fd >= 0) ::close(c.result_fd), c.result_fd = -1;
    if (c.ack_fd >= 0) ::close(c.ack_fd), c.ack_fd = -1;
    if (c.pid > 0) {
      if (kill_first) ::kill(c.pid, SIGKILL);
      int status = 0;
      while (::waitpid(c.pid, &status, 0) < 0 && errno == EINTR) {
      }
      c.pid = -1;
    }
  }
}

RunResult assemble(std::uint64_t n_frames, std::vector<GatherMessage>& messages) {
  RunResult res;
  res.rmsd.assign(n_frames, 0.0);
  res.times.assign(n_frames, 0.0);
  std::vector<bool> filled(n_frames, false);
  std::sort(messages.begin(), messages.end(),
            [](const GatherMessage& a, const GatherMessage& b) { return a.rank < b.rank; });
  for (const auto& m : messages) {
    if (m.stop > n_frames || m.start > m.stop)
      throw RunError(static_cast<int>(m.rank), "block outside trajectory");
    for (auto f = m.start; f < m.stop; ++f) {
      if (filled[f]) throw RunError(static_cast<int>(m.rank), "overlapping block");
      filled[f] = true;
      res.rmsd[f] = m.rmsd[f - m.start];
      res.times[f] = m.times[f - m.start];
    }
    res.timings.push_back(m.timing);
  }
  if (std::find(filled.begin(), filled.end(), false) != filled.end())
    throw RunError(-1, "gathered blocks do not cover the trajectory");
  return res;
}

}  // namespace

RunResult run_parallel(const StrategyConfig& config) {
  const Plan plan = prepare(config);
  const std::uint32_t n = config.n_workers;

  std::fflush(nullptr);
  std::cout.flush();
  std::cerr.flush();

  std::vector<Child> children(n);
  for (std::uint32_t r = 0; r < n; ++r) {
    int res_pipe[2], ack_pipe[2];
    if (::pipe(res_pipe) != 0 || ::pipe(ack_pipe) != 0) {
      reap_all(children, true);
      throw RunError(-1, std::string("pipe: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
      ::close(res_pipe[0]), ::close(res_pipe[1]), ::close(ack_pipe[0]), ::close(ack_pipe[1]);
      reap_all(children, true);
      throw RunError(-1, std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
      for (std::uint32_t k = 0; k < r; ++k) {
        ::close(children[k].result_fd);
        ::close(children[k].ack_fd);
      }
      ::close(res_pipe[0]);
      ::close(ack_pipe[1]);
      worker_main(config, plan, r, res_pipe[1], ack_pipe[0]);
    }
    ::close(res_pipe[1]);
    ::close(ack_pipe[0]);
    children[r].pid = pid;
    children[r].result_fd = res_pipe[0];
    children[r].ack_fd = ack_pipe[1];
  }

  const auto deadline = steady::now() + std::chrono::duration_cast<steady::duration>(
                                            std::chrono::duration<double>(config.timeout_seconds));
  std::vector<GatherMessage> messages;
  std::size_t remaining = n;
  std::vector<std::uint8_t> chunk(1 << 16);

  auto fail = [&](int rank, const std::string& cause) {
    reap_all(children, true);
    throw RunError(rank, cause);
  };

  while (remaining > 0) {
    std::vector<pollfd> fds;
    std::vector<std::uint32_t> owner;
    for (std::uint32_t r = 0; r < n; ++r)
      if (!children[r].done) {
        fds.push_back({children[r].result_fd, POLLIN, 0});
        owner.push_back(r);
      }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - steady::now());
    if (left.count() <= 0)
      fail(-1, "run aborted after " + std::to_string(config.timeout_seconds) + " s timeout");
    const int ready = ::poll(fds.data(), fds.size(), static_cast<int>(std::min<long long>(left.count(), 1000)));
    if (ready < 0) {
      if (errno == EINTR) continue;
      fail(-1, std::string("poll: ") + std::strerror(errno));
    }
    for (std::size_t i = 0; i < fds.size(); ++i) {
      if (!(fds[i].revents & (POLLIN | POLLHUP | POLLERR))) continue;
      Child& c = children[owner[i]];
      const ssize_t got = ::read(c.result_fd, chunk.data(), chunk.size());
      if (got < 0) {
        if (errno == EINTR) continue;
        fail(static_cast<int>(owner[i]), std::string("read: ") + std::strerror(errno));
      }
      if (got == 0) {
        int status = 0;
        ::waitpid(c.pid, &status, 0);
        c.pid = -1;
        fail(static_cast<int>(owner[i]),
             "worker " + describe_status(status) + " before sending its result");
      }
      c.buffer.insert(c.buffer.end(), chunk.begin(), chunk.begin() + got);
      std::optional<std::size_t> size;
      try {
        size = message_frame_size(c.buffer);
      } catch (const WireError& e) {
        fail(static_cast<int>(owner[i]), e.what());
      }
      if (!size || c.buffer.size() < *size) continue;
      if (c.buffer.size() > *size) fail(static_cast<int>(owner[i]), "unexpected bytes after message");

      GatherMessage msg;
      try {
        msg = decode_message(c.buffer);
      } catch (const WireError& e) {
        fail(static_cast<int>(owner[i]), e.what());
      }
      const double now = steady_seconds();
      const std::uint8_t ack = 1;
      write_all(c.ack_fd, {&ack, 1});
      if (msg.status != 0) fail(static_cast<int>(owner[i]), msg.error);
      if (msg.rank != owner[i]) fail(static_cast<int>(owner[i]), "message carries wrong rank");
      msg.timing.set_comm(std::max(0.0, now - msg.sent_at));
      messages.push_back(std::move(msg));
      c.done = true;
      --remaining;
    }
  }
  reap_all(children, false);

  auto result = assemble(plan.n_frames, messages);
  check_identities(result.timings);
  return result;
}

RunResult run_serial(const StrategyConfig& config) {
  const Plan plan = prepare(config);
  GatherMessage msg;
  try {
    msg = execute_rank(config, plan, 0, 1);
  } catch (const std::exception& e) {
    throw RunError(0, e.what());
  }
  msg.timing.set_comm(0.0);
  std::vector<GatherMessage> messages{std::move(msg)};
  auto result = assemble(plan.n_frames, messages);
  check_identities(result.timings);
  return result;
}

std::uint64_t total_frames(const StrategyConfig& config) { return prepare(config).n_frames; }

}  // namespace trajbench
