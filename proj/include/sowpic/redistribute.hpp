#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sowpic/core.hpp"
#include "sowpic/fabric.hpp"
#include "sowpic/layout.hpp"

namespace sowpic::redist {

inline constexpr std::size_t kHeaderBytes = 32;
inline constexpr std::size_t kRecordBytes = 64;
/// Frames a single neighbour may receive in one epoch.
inline constexpr int kMaxFramesPerEpoch = 2;

struct FrameHeader {
  std::uint32_t source = 0;
  std::uint32_t epoch = 0;
  std::uint64_t count = 0;
  std::uint64_t bytes = 0;
  std::uint64_t reserved = 0;

  bool operator==(const FrameHeader&) const = default;
};

struct MigrantFrame {
  FrameHeader header;
  std::vector<ParticleRecord> records;
};

// Little-endian wire encoding -------------------------------------------------
void encode_header(const FrameHeader& h, std::byte* out);
FrameHeader decode_header(const std::byte* in);
void encode_record(const ParticleRecord& r, std::byte* out);
ParticleRecord decode_record(const std::byte* in);

/// One frame: header immediately followed by the packed records.
std::vector<std::byte> pack_frame(std::uint32_t source, std::uint32_t epoch, std::span<const ParticleRecord> records);
/// Splits a payload of one or more concatenated frames; every header must
/// carry `expected_epoch`.
std::vector<MigrantFrame> unpack_frames(std::span<const std::byte> payload, std::uint32_t expected_epoch);

/// State snapshots reuse the frame format (a single frame, epoch = step).
void write_snapshot(const std::string& path, std::uint32_t step, std::span<const ParticleRecord> records);
std::vector<ParticleRecord> read_snapshot(const std::string& path, std::uint32_t* step = nullptr);

// ---------------------------------------------------------------------------

/// Per-rank migrant routing and frame exchange.
class RankExchange {
 public:
  RankExchange() = default;
  RankExchange(const layout::Decomposition& decomp, int rank, std::size_t frame_capacity_records);

  int rank() const { return rank_; }
  const std::vector<int>& neighbors() const { return *neighbors_; }
  std::size_t frame_capacity() const { return frame_capacity_; }
  /// Region size that holds the maximum number of frames per epoch.
  std::size_t region_bytes() const { return kMaxFramesPerEpoch * (kHeaderBytes + frame_capacity_ * kRecordBytes); }

  /// Appends a migrant to the inbox of its destination tile on this rank or
  /// to the send list of the owning neighbour.
  void route_migrant(const ParticleRecord& r, const Int3& dest_cell, std::vector<layout::ParticleTile>& tiles);

  /// Payload for one neighbour: one frame, or two when the first is full.
  std::vector<std::byte> encode_for(int neighbor, std::uint32_t epoch) const;

  std::size_t outgoing(int neighbor) const;
  std::size_t local_routed() const { return local_routed_; }
  std::size_t remote_routed() const { return remote_routed_; }
  void clear();

  /// Issues this epoch's frames: one batch of puts (one-sided) or one
  /// message per neighbour (two-sided and BSP). Returns the issue cost.
  double emit(fabric::RankFabric& fab, CommMode mode, std::uint32_t epoch);
  /// Waits for every neighbour's frame and returns the decoded records in
  /// ascending sender order; `waited` receives the virtual wait.
  std::vector<ParticleRecord> converge(fabric::RankFabric& fab, CommMode mode, bool overlapped, std::uint32_t epoch,
                                       double* waited);

  /// Hands inbound records to their tiles' inboxes. Throws OwnershipError
  /// for records this rank does not own.
  void deliver(std::span<const ParticleRecord> inbound, std::vector<layout::ParticleTile>& tiles) const;

 private:
  const layout::Decomposition* decomp_ = nullptr;
  int rank_ = 0;
  const std::vector<int>* neighbors_ = nullptr;
  std::size_t frame_capacity_ = 0;
  std::vector<std::vector<ParticleRecord>> out_;  // per neighbour position
  std::size_t local_routed_ = 0;
  std::size_t remote_routed_ = 0;

  int neighbor_slot(int rank) const;
};

/// Registers the particle regions every rank needs for one-sided exchange.
void register_particle_regions(fabric::RankFabric& fab, const layout::Decomposition& decomp,
                               const std::vector<RankExchange>& exchanges);

}  // namespace sowpic::redist
