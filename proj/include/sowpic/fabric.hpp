#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "sowpic/core.hpp"

namespace sowpic::fabric {

/// Separate epoch spaces so field halo traffic never mixes with particle frames.
enum class Namespace : int { Particles = 0, Fields = 1 };
inline constexpr int kNamespaces = 2;

/// Bytes every region can hold even when registered with size zero.
inline constexpr std::size_t kMinRegionBytes = 32;

struct RegionHandle {
  int receiver = -1;
  int sender = -1;
  Namespace ns = Namespace::Particles;
};

struct PutEntry {
  RegionHandle handle;
  std::span<const std::byte> payload;
};

struct WaitResult {
  double waited = 0.0;      // virtual seconds the receiver's clock advanced
  double completion = 0.0;  // latest completion among the awaited puts
};

struct RecvResult {
  std::vector<std::byte> payload;
  std::uint32_t epoch = 0;
  double waited = 0.0;
};

/// In-process stand-in for a set of ranks connected by notifiable one-sided
/// puts and FIFO two-sided channels, with a per-rank virtual clock.
///
/// Each (receiver, sender, namespace) region has two slots selected by epoch
/// parity, so a sender may run one epoch ahead of a slow receiver. Counters
/// are per (receiver, namespace, parity) and only ever increase.
class RankFabric {
 public:
  RankFabric(int ranks, CostModel cost);

  int ranks() const { return ranks_; }
  const CostModel& cost() const { return cost_; }

  RegionHandle register_region(int receiver, int sender, std::size_t bytes, Namespace ns = Namespace::Particles);
  bool has_region(int receiver, int sender, Namespace ns) const;
  std::size_t region_bytes(const RegionHandle& h) const;

  /// Writes the payload into the receiver's region and then bumps its counter.
  void put_notify(int sender, const RegionHandle& h, std::span<const std::byte> payload, std::uint32_t epoch);
  /// Issues every entry as one call; a second batch from the same sender in
  /// the same namespace and epoch is a protocol error.
  void batch_put(int sender, std::span<const PutEntry> entries, std::uint32_t epoch,
                 Namespace ns = Namespace::Particles);

  /// Blocks until every listed sender's put for `epoch` has landed, then
  /// advances the receiver's clock to the latest completion.
  WaitResult wait_counter(int receiver, std::span<const int> senders, std::uint32_t epoch,
                          Namespace ns = Namespace::Particles);

  /// Payload of the last put into a region; throws when it is not from `epoch`.
  std::span<const std::byte> read_region(const RegionHandle& h, std::uint32_t epoch) const;

  std::uint64_t counter(int receiver, Namespace ns, int parity) const;

  void channel_send(int sender, int receiver, std::vector<std::byte> payload, std::uint32_t epoch);
  /// Receives the oldest message from `sender`. `overlapped` marks a receive
  /// posted after a compute phase during which the message could not be
  /// progressed; the completion then carries the progression penalty.
  RecvResult channel_recv(int receiver, int sender, bool overlapped);

  // Virtual clock -----------------------------------------------------------
  double now(int rank) const { return now_[static_cast<std::size_t>(rank)]; }
  void advance(int rank, double dt) { now_[static_cast<std::size_t>(rank)] += dt; }
  void set_now(int rank, double t) { now_[static_cast<std::size_t>(rank)] = t; }

  // Worker lifecycle for deadlock detection ---------------------------------
  void start_workers(int count);
  void worker_done();
  /// Wakes every blocked worker with a ProtocolError carrying `reason`.
  void abort(const std::string& reason);
  bool aborted() const;
  /// Clears an abort so the fabric can be reused.
  void reset_abort();

 private:
  struct Slot {
    std::vector<std::byte> data;
    std::uint32_t epoch = 0;
    bool written = false;
    double completion = 0.0;
  };
  struct Region {
    std::size_t bytes = 0;
    Slot slot[2];
  };
  struct Message {
    std::vector<std::byte> payload;
    std::uint32_t epoch = 0;
    double t_send = 0.0;
  };
  struct Waiter {
    std::function<bool()> satisfied;
    std::function<std::string()> describe;
  };

  std::size_t key(int receiver, int sender, Namespace ns) const;
  std::size_t counter_key(int receiver, Namespace ns, int parity) const;
  void put_locked(int sender, const RegionHandle& h, std::span<const std::byte> payload, std::uint32_t epoch);
  /// Blocks the calling worker until `w.satisfied()`; must hold `lock`.
  void block(std::unique_lock<std::mutex>& lock, int rank, const Waiter& w);
  void check_deadlock_locked();

  int ranks_;
  CostModel cost_;
  std::vector<std::unique_ptr<Region>> regions_;
  std::vector<std::atomic<std::uint64_t>> counters_;
  std::map<std::pair<int, int>, std::deque<Message>> channels_;
  std::vector<double> now_;
  std::vector<double> particle_inflight_until_;
  std::vector<std::int64_t> last_batch_epoch_;  // per (sender, namespace)

  mutable std::mutex mu_;
  std::condition_variable cv_;
  int active_workers_ = 0;
  std::map<int, const Waiter*> waiting_;
  std::string abort_reason_;
  bool aborted_ = false;
};

}  // namespace sowpic::fabric
