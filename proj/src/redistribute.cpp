#include "sowpic/redistribute.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace sowpic::redist {

namespace {

static_assert(std::endian::native == std::endian::little, "wire format assumes a little-endian host");

template <typename T>
void put(std::byte*& p, T v) {
  std::memcpy(p, &v, sizeof(T));
  p += sizeof(T);
}

template <typename T>
T get(const std::byte*& p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  p += sizeof(T);
  return v;
}

std::string triple(const Int3& v) {
  return "(" + std::to_string(v[0]) + "," + std::to_string(v[1]) + "," + std::to_string(v[2]) + ")";
}

}  // namespace

void encode_header(const FrameHeader& h, std::byte* out) {
  put(out, h.source);
  put(out, h.epoch);
  put(out, h.count);
  put(out, h.bytes);
  put(out, h.reserved);
}

FrameHeader decode_header(const std::byte* in) {
  FrameHeader h;
  h.source = get<std::uint32_t>(in);
  h.epoch = get<std::uint32_t>(in);
  h.count = get<std::uint64_t>(in);
  h.bytes = get<std::uint64_t>(in);
  h.reserved = get<std::uint64_t>(in);
  return h;
}

void encode_record(const ParticleRecord& r, std::byte* out) {
  put(out, r.id);
  for (double v : {r.x, r.y, r.z, r.ux, r.uy, r.uz, r.w}) put(out, v);
}

ParticleRecord decode_record(const std::byte* in) {
  ParticleRecord r;
  r.id = get<std::uint64_t>(in);
  r.x = get<double>(in);
  r.y = get<double>(in);
  r.z = get<double>(in);
  r.ux = get<double>(in);
  r.uy = get<double>(in);
  r.uz = get<double>(in);
  r.w = get<double>(in);
  return r;
}

std::vector<std::byte> pack_frame(std::uint32_t source, std::uint32_t epoch, std::span<const ParticleRecord> records) {
  std::vector<std::byte> out(kHeaderBytes + records.size() * kRecordBytes);
  encode_header({source, epoch, records.size(), records.size() * kRecordBytes, 0}, out.data());
  std::byte* p = out.data() + kHeaderBytes;
  for (const auto& r : records) {
    encode_record(r, p);
    p += kRecordBytes;
  }
  return out;
}

std::vector<MigrantFrame> unpack_frames(std::span<const std::byte> payload, std::uint32_t expected_epoch) {
  std::vector<MigrantFrame> frames;
  std::size_t at = 0;
  while (at < payload.size()) {
    if (payload.size() - at < kHeaderBytes) throw ProtocolError("truncated frame header");
    MigrantFrame f;
    f.header = decode_header(payload.data() + at);
    at += kHeaderBytes;
    if (f.header.epoch != expected_epoch) {
      throw ProtocolError("frame from rank " + std::to_string(f.header.source) + " carries epoch " +
                          std::to_string(f.header.epoch) + ", expected " + std::to_string(expected_epoch));
    }
    if (f.header.bytes != f.header.count * kRecordBytes || payload.size() - at < f.header.bytes) {
      throw ProtocolError("frame payload length does not match its record count");
    }
    f.records.reserve(f.header.count);
    for (std::uint64_t i = 0; i < f.header.count; ++i) {
      f.records.push_back(decode_record(payload.data() + at));
      at += kRecordBytes;
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

void write_snapshot(const std::string& path, std::uint32_t step, std::span<const ParticleRecord> records) {
  const auto bytes = pack_frame(0, step, records);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open snapshot file " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<ParticleRecord> read_snapshot(const std::string& path, std::uint32_t* step) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open snapshot file " + path);
  std::vector<char> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (raw.size() < kHeaderBytes) throw ProtocolError("snapshot shorter than a header");
  const auto* p = reinterpret_cast<const std::byte*>(raw.data());
  const FrameHeader h = decode_header(p);
  if (step) *step = h.epoch;
  auto frames = unpack_frames({p, raw.size()}, h.epoch);
  return frames.empty() ? std::vector<ParticleRecord>{} : std::move(frames.front().records);
}

// ---------------------------------------------------------------------------

RankExchange::RankExchange(const layout::Decomposition& decomp, int rank, std::size_t capacity)
    : decomp_(&decomp), rank_(rank), neighbors_(&decomp.neighbor_ranks(rank)), frame_capacity_(std::max<std::size_t>(capacity, 1)) {
  out_.resize(neighbors_->size());
}

int RankExchange::neighbor_slot(int rank) const {
  const auto it = std::lower_bound(neighbors_->begin(), neighbors_->end(), rank);
  if (it == neighbors_->end() || *it != rank) return -1;
  return static_cast<int>(it - neighbors_->begin());
}

void RankExchange::route_migrant(const ParticleRecord& r, const Int3& dest_cell,
                                 std::vector<layout::ParticleTile>& tiles) {
  const int owner = decomp_->owner_of_cell(dest_cell);
  if (owner == rank_) {
    const Int3 t = tile_of_cell(dest_cell, decomp_->geometry());
    tiles[static_cast<std::size_t>(decomp_->local_tile_index(t))].inbox.push_back(r);
    ++local_routed_;
    return;
  }
  const int slot = neighbor_slot(owner);
  if (slot < 0) {
    throw MigrationError("particle " + std::to_string(r.id) + " heads to cell " + triple(dest_cell) + " on rank " +
                         std::to_string(owner) + ", which is not a neighbour of rank " + std::to_string(rank_));
  }
  out_[static_cast<std::size_t>(slot)].push_back(r);
  ++remote_routed_;
}

std::size_t RankExchange::outgoing(int neighbor) const {
  const int slot = neighbor_slot(neighbor);
  return slot < 0 ? 0 : out_[static_cast<std::size_t>(slot)].size();
}

std::vector<std::byte> RankExchange::encode_for(int neighbor, std::uint32_t epoch) const {
  const int slot = neighbor_slot(neighbor);
  if (slot < 0) throw ProtocolError("rank " + std::to_string(neighbor) + " is not a neighbour");
  const auto& recs = out_[static_cast<std::size_t>(slot)];
  const std::size_t frames = std::max<std::size_t>(1, (recs.size() + frame_capacity_ - 1) / frame_capacity_);
  if (frames > static_cast<std::size_t>(kMaxFramesPerEpoch)) {
    throw ProtocolError(std::to_string(recs.size()) + " migrants for rank " + std::to_string(neighbor) +
                        " need more than " + std::to_string(kMaxFramesPerEpoch) + " frames of " +
                        std::to_string(frame_capacity_) + " records");
  }
  std::vector<std::byte> payload;
  const auto src = static_cast<std::uint32_t>(rank_);
  for (std::size_t f = 0; f < frames; ++f) {
    const std::size_t b = f * frame_capacity_;
    const std::size_t e = std::min(recs.size(), b + frame_capacity_);
    const auto part = pack_frame(src, epoch, std::span(recs).subspan(b, e - b));
    payload.insert(payload.end(), part.begin(), part.end());
  }
  return payload;
}

void RankExchange::clear() {
  for (auto& v : out_) v.clear();
  local_routed_ = 0;
  remote_routed_ = 0;
}

double RankExchange::emit(fabric::RankFabric& fab, CommMode mode, std::uint32_t epoch) {
  const auto& nbrs = *neighbors_;
  const CostModel& cost = fab.cost();
  if (mode == CommMode::OneSided) {
    const double issue = cost.vt_issue;
    fab.advance(rank_, issue);
    std::vector<std::vector<std::byte>> payloads;
    payloads.reserve(nbrs.size());
    std::vector<fabric::PutEntry> entries;
    for (int n : nbrs) {
      payloads.push_back(encode_for(n, epoch));
      entries.push_back({{n, rank_, fabric::Namespace::Particles}, payloads.back()});
    }
    fab.batch_put(rank_, entries, epoch, fabric::Namespace::Particles);
    return issue;
  }
  double issue = 0.0;
  for (int n : nbrs) {
    fab.advance(rank_, cost.vt_issue_message);
    issue += cost.vt_issue_message;
    fab.channel_send(rank_, n, encode_for(n, epoch), epoch);
  }
  return issue;
}

std::vector<ParticleRecord> RankExchange::converge(fabric::RankFabric& fab, CommMode mode, bool overlapped,
                                                   std::uint32_t epoch, double* waited) {
  const auto& nbrs = *neighbors_;
  std::vector<ParticleRecord> inbound;
  double w = 0.0;
  if (mode == CommMode::OneSided) {
    if (!nbrs.empty()) {
      w = fab.wait_counter(rank_, nbrs, epoch, fabric::Namespace::Particles).waited;
      for (int n : nbrs) {
        for (auto& f : unpack_frames(fab.read_region({rank_, n, fabric::Namespace::Particles}, epoch), epoch)) {
          inbound.insert(inbound.end(), f.records.begin(), f.records.end());
        }
      }
    }
  } else {
    for (int n : nbrs) {
      auto msg = fab.channel_recv(rank_, n, overlapped);
      w += msg.waited;
      for (auto& f : unpack_frames(msg.payload, epoch)) inbound.insert(inbound.end(), f.records.begin(), f.records.end());
    }
  }
  if (waited) *waited = w;
  return inbound;
}

void RankExchange::deliver(std::span<const ParticleRecord> inbound, std::vector<layout::ParticleTile>& tiles) const {
  const GridGeometry& g = decomp_->geometry();
  for (const auto& r : inbound) {
    const CellId c = cell_of(r.position(), g, r.id);
    if (decomp_->owner_of_cell(c.idx) != rank_) {
      throw OwnershipError("rank " + std::to_string(rank_) + " received particle " + std::to_string(r.id) +
                           " in cell " + triple(c.idx) + " it does not own");
    }
    tiles[static_cast<std::size_t>(decomp_->local_tile_index(tile_of_cell(c.idx, g)))].inbox.push_back(r);
  }
}

void register_particle_regions(fabric::RankFabric& fab, const layout::Decomposition& decomp,
                               const std::vector<RankExchange>& exchanges) {
  for (int r = 0; r < decomp.rank_count(); ++r) {
    for (int s : decomp.neighbor_ranks(r)) {
      fab.register_region(r, s, exchanges[static_cast<std::size_t>(s)].region_bytes(), fabric::Namespace::Particles);
    }
  }
}

}  // namespace sowpic::redist
