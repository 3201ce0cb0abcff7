#include "sowpic/fabric.hpp"

#include <algorithm>
#include <cstring>

namespace sowpic::fabric {

namespace {

const char* ns_name(Namespace ns) { return ns == Namespace::Particles ? "particles" : "fields"; }

}  // namespace

RankFabric::RankFabric(int ranks, CostModel cost)
    : ranks_(ranks),
      cost_(cost),
      regions_(static_cast<std::size_t>(ranks) * ranks * kNamespaces),
      counters_(static_cast<std::size_t>(ranks) * kNamespaces * 2),
      now_(static_cast<std::size_t>(ranks), 0.0),
      particle_inflight_until_(static_cast<std::size_t>(ranks), 0.0),
      last_batch_epoch_(static_cast<std::size_t>(ranks) * kNamespaces, -1) {
  if (ranks <= 0) throw ConfigError("fabric needs at least one rank");
  for (auto& c : counters_) c.store(0, std::memory_order_relaxed);
}

std::size_t RankFabric::key(int receiver, int sender, Namespace ns) const {
  if (receiver < 0 || receiver >= ranks_ || sender < 0 || sender >= ranks_) {
    throw ProtocolError("rank index out of range (receiver " + std::to_string(receiver) + ", sender " +
                        std::to_string(sender) + ")");
  }
  return (static_cast<std::size_t>(static_cast<int>(ns)) * ranks_ + receiver) * ranks_ + sender;
}

std::size_t RankFabric::counter_key(int receiver, Namespace ns, int parity) const {
  return (static_cast<std::size_t>(receiver) * kNamespaces + static_cast<std::size_t>(ns)) * 2 + parity;
}

RegionHandle RankFabric::register_region(int receiver, int sender, std::size_t bytes, Namespace ns) {
  std::lock_guard lock(mu_);
  auto& r = regions_[key(receiver, sender, ns)];
  if (r) {
    throw ProtocolError("region for receiver " + std::to_string(receiver) + " from sender " + std::to_string(sender) +
                        " already registered");
  }
  r = std::make_unique<Region>();
  r->bytes = std::max(bytes, kMinRegionBytes);
  return {receiver, sender, ns};
}

bool RankFabric::has_region(int receiver, int sender, Namespace ns) const {
  std::lock_guard lock(mu_);
  return regions_[key(receiver, sender, ns)] != nullptr;
}

std::size_t RankFabric::region_bytes(const RegionHandle& h) const {
  std::lock_guard lock(mu_);
  const auto& r = regions_[key(h.receiver, h.sender, h.ns)];
  if (!r) throw ProtocolError("region not registered");
  return r->bytes;
}

void RankFabric::put_locked(int sender, const RegionHandle& h, std::span<const std::byte> payload,
                            std::uint32_t epoch) {
  if (h.sender != sender) {
    throw ProtocolError("rank " + std::to_string(sender) + " cannot write the region owned by sender " +
                        std::to_string(h.sender));
  }
  auto& r = regions_[key(h.receiver, h.sender, h.ns)];
  if (!r) {
    throw ProtocolError("put into unregistered region (receiver " + std::to_string(h.receiver) + ", sender " +
                        std::to_string(sender) + ")");
  }
  if (payload.size() > r->bytes) {
    throw ProtocolError("put of " + std::to_string(payload.size()) + " bytes exceeds region of " +
                        std::to_string(r->bytes) + " bytes");
  }
  const auto s = static_cast<std::size_t>(sender);
  double latency = cost_.latency(payload.size());
  const double t = now_[s];
  if (h.ns == Namespace::Fields && t < particle_inflight_until_[s]) latency *= cost_.contention;
  const double completion = t + latency;
  if (h.ns == Namespace::Particles) particle_inflight_until_[s] = std::max(particle_inflight_until_[s], completion);

  Slot& slot = r->slot[epoch % 2];
  slot.data.assign(payload.begin(), payload.end());
  slot.epoch = epoch;
  slot.written = true;
  slot.completion = completion;
  counters_[counter_key(h.receiver, h.ns, static_cast<int>(epoch % 2))].fetch_add(1, std::memory_order_release);
}

void RankFabric::put_notify(int sender, const RegionHandle& h, std::span<const std::byte> payload,
                            std::uint32_t epoch) {
  {
    std::lock_guard lock(mu_);
    put_locked(sender, h, payload, epoch);
  }
  cv_.notify_all();
}

void RankFabric::batch_put(int sender, std::span<const PutEntry> entries, std::uint32_t epoch, Namespace ns) {
  {
    std::lock_guard lock(mu_);
    auto& last = last_batch_epoch_[static_cast<std::size_t>(sender) * kNamespaces + static_cast<std::size_t>(ns)];
    if (last == static_cast<std::int64_t>(epoch)) {
      throw ProtocolError("rank " + std::to_string(sender) + " issued a second batch in epoch " +
                          std::to_string(epoch) + " (" + ns_name(ns) + ")");
    }
    last = epoch;
    for (const auto& e : entries) {
      if (e.handle.ns != ns) throw ProtocolError("batch entry in a different namespace");
      put_locked(sender, e.handle, e.payload, epoch);
    }
  }
  cv_.notify_all();
}

WaitResult RankFabric::wait_counter(int receiver, std::span<const int> senders, std::uint32_t epoch,
                                    Namespace ns) {
  std::unique_lock lock(mu_);
  auto landed = [&](int s) {
    const auto& r = regions_[key(receiver, s, ns)];
    if (!r) throw ProtocolError("waiting on unregistered region from sender " + std::to_string(s));
    const Slot& slot = r->slot[epoch % 2];
    return slot.written && slot.epoch == epoch;
  };
  const std::vector<int> list(senders.begin(), senders.end());
  Waiter w;
  w.satisfied = [&] {
    // Counter first (acquire), then per-slot epoch tags.
    (void)counters_[counter_key(receiver, ns, static_cast<int>(epoch % 2))].load(std::memory_order_acquire);
    return std::all_of(list.begin(), list.end(), landed);
  };
  w.describe = [&] {
    std::string missing;
    for (int s : list)
      if (!landed(s)) missing += (missing.empty() ? "" : ", ") + std::to_string(s);
    return "rank " + std::to_string(receiver) + " waiting in epoch " + std::to_string(epoch) + " (" + ns_name(ns) +
           ") for senders [" + missing + "]";
  };
  block(lock, receiver, w);

  WaitResult res;
  const auto r = static_cast<std::size_t>(receiver);
  double latest = now_[r];
  for (int s : list) latest = std::max(latest, regions_[key(receiver, s, ns)]->slot[epoch % 2].completion);
  res.completion = latest;
  res.waited = latest - now_[r];
  now_[r] = latest;
  return res;
}

std::span<const std::byte> RankFabric::read_region(const RegionHandle& h, std::uint32_t epoch) const {
  std::lock_guard lock(mu_);
  const auto& r = regions_[key(h.receiver, h.sender, h.ns)];
  if (!r) throw ProtocolError("read of unregistered region");
  const Slot& slot = r->slot[epoch % 2];
  if (!slot.written || slot.epoch != epoch) {
    throw ProtocolError("region from sender " + std::to_string(h.sender) + " holds epoch " +
                        std::to_string(slot.epoch) + ", expected " + std::to_string(epoch));
  }
  return {slot.data.data(), slot.data.size()};
}

std::uint64_t RankFabric::counter(int receiver, Namespace ns, int parity) const {
  return counters_[counter_key(receiver, ns, parity)].load(std::memory_order_acquire);
}

void RankFabric::channel_send(int sender, int receiver, std::vector<std::byte> payload, std::uint32_t epoch) {
  {
    std::lock_guard lock(mu_);
    (void)key(receiver, sender, Namespace::Particles);
    channels_[{sender, receiver}].push_back({std::move(payload), epoch, now_[static_cast<std::size_t>(sender)]});
  }
  cv_.notify_all();
}

RecvResult RankFabric::channel_recv(int receiver, int sender, bool overlapped) {
  std::unique_lock lock(mu_);
  auto& q = channels_[{sender, receiver}];
  Waiter w;
  w.satisfied = [&] { return !q.empty(); };
  w.describe = [&] {
    return "rank " + std::to_string(receiver) + " waiting on a channel message from sender " + std::to_string(sender);
  };
  block(lock, receiver, w);

  Message m = std::move(q.front());
  q.pop_front();
  const auto r = static_cast<std::size_t>(receiver);
  const double latency = cost_.latency(m.payload.size());
  double done = std::max(m.t_send + latency, now_[r]);
  if (overlapped) done += cost_.progression_penalty * latency;
  RecvResult res;
  res.waited = done - now_[r];
  res.epoch = m.epoch;
  res.payload = std::move(m.payload);
  now_[r] = done;
  return res;
}

void RankFabric::start_workers(int count) {
  std::lock_guard lock(mu_);
  active_workers_ = count;
  waiting_.clear();
}

void RankFabric::worker_done() {
  {
    std::lock_guard lock(mu_);
    --active_workers_;
    if (!aborted_) check_deadlock_locked();
  }
  cv_.notify_all();
}

void RankFabric::abort(const std::string& reason) {
  {
    std::lock_guard lock(mu_);
    if (!aborted_) {
      aborted_ = true;
      abort_reason_ = reason;
    }
  }
  cv_.notify_all();
}

bool RankFabric::aborted() const {
  std::lock_guard lock(mu_);
  return aborted_;
}

void RankFabric::reset_abort() {
  std::lock_guard lock(mu_);
  aborted_ = false;
  abort_reason_.clear();
}

void RankFabric::check_deadlock_locked() {
  if (active_workers_ <= 0 || static_cast<int>(waiting_.size()) < active_workers_) return;
  std::string detail;
  for (const auto& [rank, w] : waiting_) {
    if (w->satisfied()) return;
    detail += (detail.empty() ? "" : "; ") + w->describe();
  }
  aborted_ = true;
  abort_reason_ = "deadlock: " + detail;
}

void RankFabric::block(std::unique_lock<std::mutex>& lock, int rank, const Waiter& w) {
  if (aborted_) throw ProtocolError(abort_reason_);
  if (w.satisfied()) return;
  waiting_[rank] = &w;
  check_deadlock_locked();
  if (aborted_) {
    waiting_.erase(rank);
    cv_.notify_all();
    throw ProtocolError(abort_reason_);
  }
  cv_.wait(lock, [&] { return aborted_ || w.satisfied(); });
  waiting_.erase(rank);
  if (aborted_ && !w.satisfied()) throw ProtocolError(abort_reason_);
}

}  // namespace sowpic::fabric
