#pragma once

// Planning and execution of grouped shared/local denoising across simulated
// devices, with a linear compute/energy model and Shannon-rate links.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cdiff/channel.hpp"
#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"
#include "cdiff/rng.hpp"
#include "cdiff/semantic.hpp"

namespace cdiff {

// ---------------------------------------------------------------------------
// Devices and architectures

enum class DeviceRole { edge, user };
enum class PowerClass { low, medium, high };

/// Linear link SNR reached by each transmit power class.
inline double snr_for_power_class(PowerClass c) {
  switch (c) {
    case PowerClass::low: return 1.0;
    case PowerClass::medium: return 3.0;
    case PowerClass::high: return 10.0;
  }
  return 1.0;
}

struct DeviceProfile {
  std::string id;
  DeviceRole role = DeviceRole::user;
  double compute_rate = 2.0;      // denoising steps per second
  double energy_per_step = 1.5;   // joules
  PowerClass power_class = PowerClass::medium;
  double uplink_hz = 1e4;
  double downlink_hz = 1e4;

  double link_snr() const { return snr_for_power_class(power_class); }

  void validate() const {
    require(!id.empty(), "device id must be non-empty");
    require(compute_rate > 0.0, "device '" + id + "' needs compute_rate > 0");
    require(energy_per_step > 0.0, "device '" + id + "' needs energy_per_step > 0");
    require(uplink_hz > 0.0 && downlink_hz > 0.0, "device '" + id + "' needs positive bandwidth");
  }
};

inline DeviceProfile default_edge_profile(std::string id = "edge") {
  return {std::move(id), DeviceRole::edge, 20.0, 2.0, PowerClass::high, 1e5, 1e5};
}

inline DeviceProfile default_user_profile(std::string id) {
  return {std::move(id), DeviceRole::user, 2.0, 1.5, PowerClass::medium, 1e4, 1e4};
}

using ProfileMap = std::map<std::string, DeviceProfile>;

struct Architecture {
  enum class Kind { edge_to_multi, d2d, cluster };
  Kind kind = Kind::edge_to_multi;
  bool with_edge = false;  // only meaningful for cluster

  static Architecture edge_to_multi() { return {Kind::edge_to_multi, true}; }
  static Architecture d2d() { return {Kind::d2d, false}; }
  static Architecture cluster(bool with_edge) { return {Kind::cluster, with_edge}; }

  std::string name() const {
    switch (kind) {
      case Kind::edge_to_multi: return "edge";
      case Kind::d2d: return "d2d";
      case Kind::cluster: return with_edge ? "cluster_edge" : "cluster";
    }
    return "?";
  }
};

inline Architecture parse_architecture(const std::string& name) {
  if (name == "edge" || name == "edge_to_multi") return Architecture::edge_to_multi();
  if (name == "d2d") return Architecture::d2d();
  if (name == "cluster") return Architecture::cluster(false);
  if (name == "cluster_edge") return Architecture::cluster(true);
  fail(ErrorKind::config, "unknown architecture '" + name + "'");
}

// ---------------------------------------------------------------------------
// Plans

struct MemberTask {
  std::string user;
  int local_steps = 0;
  std::optional<ChannelModel> link;  // nullopt: handoff stays on the executor
};

struct GroupPlan {
  std::vector<std::string> members;  // leader first
  std::string executor;
  int shared_steps = 0;
  Condition shared_condition;
  std::vector<MemberTask> tasks;  // parallel to members
};

struct TaskPlan {
  int total_steps = 0;
  std::vector<GroupPlan> groups;

  void validate() const {
    for (const auto& g : groups) {
      require(g.shared_steps >= 0 && g.shared_steps <= total_steps,
              "plan shared step count outside [0, T]");
      require(g.tasks.size() == g.members.size(), "plan member/task mismatch");
      for (const auto& t : g.tasks)
        require(t.local_steps == total_steps - g.shared_steps,
                "plan local steps must equal T - s for every member");
    }
  }
};

namespace detail {
inline const DeviceProfile& profile_of(const ProfileMap& profiles, const std::string& id) {
  auto it = profiles.find(id);
  if (it == profiles.end()) fail(ErrorKind::domain, "no device profile for '" + id + "'");
  return it->second;
}

inline const DeviceProfile* first_edge(const ProfileMap& profiles) {
  for (const auto& [id, p] : profiles)
    if (p.role == DeviceRole::edge) return &p;
  return nullptr;
}

/// Highest compute rate; ties go to an edge device, then to the smaller id.
inline std::string pick_executor(const std::vector<const DeviceProfile*>& candidates) {
  const DeviceProfile* best = nullptr;
  for (const auto* p : candidates) {
    if (!best || p->compute_rate > best->compute_rate) {
      best = p;
    } else if (p->compute_rate == best->compute_rate) {
      const bool p_edge = p->role == DeviceRole::edge;
      const bool b_edge = best->role == DeviceRole::edge;
      if ((p_edge && !b_edge) || (p_edge == b_edge && p->id < best->id)) best = p;
    }
  }
  return best->id;
}
}  // namespace detail

/// Assigns a shared-phase executor and member links to every group.
inline TaskPlan plan(const Architecture& arch, const ClusterAssignment& assignment,
                     const std::map<std::string, PromptSpec>& prompts, const ProfileMap& profiles,
                     int total_steps, int shared_steps, SharedPolicy policy,
                     const ChannelModel& link_model) {
  require(total_steps >= 1, "plan needs T >= 1");
  require(shared_steps >= 0 && shared_steps <= total_steps, "shared steps must lie in [0, T]");
  link_model.validate();
  for (const auto& [id, p] : profiles) p.validate();

  std::size_t users = 0;
  for (const auto& g : assignment.groups) {
    require(!g.members.empty(), "assignment contains an empty group");
    users += g.members.size();
    for (const auto& m : g.members) {
      const auto& p = detail::profile_of(profiles, m);
      require(p.role == DeviceRole::user, "group member '" + m + "' is not a user device");
      require(prompts.contains(m), "no prompt for user '" + m + "'");
    }
  }
  const DeviceProfile* edge = detail::first_edge(profiles);
  if (arch.kind == Architecture::Kind::d2d && users != 2)
    fail(ErrorKind::domain, "D2D architecture requires exactly 2 users, got " + std::to_string(users));
  if ((arch.kind == Architecture::Kind::edge_to_multi ||
       (arch.kind == Architecture::Kind::cluster && arch.with_edge)) &&
      edge == nullptr)
    fail(ErrorKind::domain, "architecture '" + arch.name() + "' requires an edge device profile");

  TaskPlan out;
  out.total_steps = total_steps;
  for (const auto& g : assignment.groups) {
    GroupPlan gp;
    gp.members = g.members;
    gp.shared_steps = shared_steps;
    std::vector<PromptSpec> member_prompts;
    for (const auto& m : g.members) member_prompts.push_back(prompts.at(m));
    gp.shared_condition = shared_condition(member_prompts, policy);

    std::vector<const DeviceProfile*> candidates;
    for (const auto& m : g.members) candidates.push_back(&detail::profile_of(profiles, m));
    switch (arch.kind) {
      case Architecture::Kind::edge_to_multi:
        gp.executor = edge->id;
        break;
      case Architecture::Kind::d2d:
        gp.executor = detail::pick_executor(candidates);
        break;
      case Architecture::Kind::cluster:
        if (arch.with_edge) candidates.push_back(edge);
        gp.executor = detail::pick_executor(candidates);
        break;
    }
    for (const auto& m : g.members) {
      MemberTask task{m, total_steps - shared_steps, std::nullopt};
      if (m != gp.executor) task.link = link_model;
      gp.tasks.push_back(std::move(task));
    }
    out.groups.push_back(std::move(gp));
  }
  out.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Cost model

struct DeviceCost {
  std::string device;
  int steps = 0;
  double compute_s = 0.0;
  double transmit_s = 0.0;
  double energy_j = 0.0;
};

struct CostReport {
  std::vector<DeviceCost> devices;              // sorted by device id
  std::vector<double> group_latency_s;          // parallel to plan groups
  std::map<std::string, double> user_latency_s; // shared + link + local per user

  const DeviceCost* device(const std::string& id) const {
    for (const auto& d : devices)
      if (d.device == id) return &d;
    return nullptr;
  }

  double total_energy() const {
    double e = 0.0;
    for (const auto& d : devices) e += d.energy_j;
    return e;
  }
};

struct CostOptions {
  double fixed_rate_bps = 1e6;       // rate for links without an SNR
  std::vector<bool> shared_cached;   // per group; cached shared phases cost nothing
};

/// Link data rate in bits/s: bandwidth * log2(1 + snr), or the fixed rate.
inline double link_rate(const ChannelModel& model, const DeviceProfile& receiver,
                        double fixed_rate_bps) {
  if (auto snr = model.snr()) {
    const double bandwidth = model.bandwidth_hz.value_or(receiver.downlink_hz);
    require(bandwidth > 0.0, "SNR-bearing link needs a non-zero bandwidth");
    return bandwidth * std::log2(1.0 + *snr);
  }
  require(fixed_rate_bps > 0.0, "fixed link rate must be positive");
  return fixed_rate_bps;
}

inline CostReport cost(const TaskPlan& tp, const ProfileMap& profiles, std::size_t payload_bits,
                       const CostOptions& options = {}) {
  tp.validate();
  std::map<std::string, DeviceCost> acc;
  auto charge_steps = [&](const std::string& id, int steps) {
    const auto& p = detail::profile_of(profiles, id);
    auto& d = acc[id];
    d.device = id;
    d.steps += steps;
    d.compute_s += steps / p.compute_rate;
    d.energy_j += steps * p.energy_per_step;
    return steps / p.compute_rate;
  };

  CostReport report;
  for (std::size_t gi = 0; gi < tp.groups.size(); ++gi) {
    const auto& g = tp.groups[gi];
    const bool cached = gi < options.shared_cached.size() && options.shared_cached[gi];
    const double shared_s = charge_steps(g.executor, cached ? 0 : g.shared_steps);
    double tail = 0.0;
    for (const auto& task : g.tasks) {
      double transmit_s = 0.0;
      if (task.link) {
        const auto& receiver = detail::profile_of(profiles, task.user);
        transmit_s = static_cast<double>(payload_bits) /
                     link_rate(*task.link, receiver, options.fixed_rate_bps);
        auto& sender = acc[g.executor];
        sender.device = g.executor;
        sender.transmit_s += transmit_s;
      }
      const double local_s = charge_steps(task.user, task.local_steps);
      tail = std::max(tail, transmit_s + local_s);
      report.user_latency_s[task.user] = shared_s + transmit_s + local_s;
    }
    report.group_latency_s.push_back(shared_s + tail);
  }
  for (auto& [id, d] : acc) report.devices.push_back(d);
  return report;
}

// ---------------------------------------------------------------------------
// Fade-driven split adaptation

struct FadePoint {
  double time_s = 0.0;
  double snr = 1.0;
};

struct AdaptParams {
  double deep_fade_snr = 0.5;
  int increment = 2;
};

/// Piecewise-constant lookup: the last point at or before t (first point if t precedes all).
inline double snr_at(const std::vector<FadePoint>& timeline, double t) {
  require(!timeline.empty(), "fade timeline is empty");
  double snr = timeline.front().snr;
  for (const auto& p : timeline) {
    if (p.time_s <= t) snr = p.snr;
  }
  return snr;
}

/// Adds shared steps to groups whose handoff would land in a deep fade.
inline TaskPlan adapt_split(TaskPlan tp, const std::vector<FadePoint>& timeline,
                            const ProfileMap& profiles, const AdaptParams& params = {}) {
  if (timeline.empty()) return tp;
  for (auto& g : tp.groups) {
    const bool snr_link = std::any_of(g.tasks.begin(), g.tasks.end(), [](const MemberTask& t) {
      return t.link && t.link->snr().has_value();
    });
    if (!snr_link) continue;
    const auto& exec = detail::profile_of(profiles, g.executor);
    const double handoff_time = g.shared_steps / exec.compute_rate;
    if (snr_at(timeline, handoff_time) >= params.deep_fade_snr) continue;
    const int cap = tp.total_steps - 1;
    if (g.shared_steps >= cap) continue;
    g.shared_steps = std::min(cap, g.shared_steps + params.increment);
    for (auto& t : g.tasks) t.local_steps = tp.total_steps - g.shared_steps;
  }
  tp.validate();
  return tp;
}

// ---------------------------------------------------------------------------
// Conditioning

/// Maps a concept-level condition onto the mixture. Concepts without a
/// prototype (scene context such as "table") are dropped; every other mixture
/// concept is kept at weight `background` so that the sampler can still follow
/// a handoff that drifted toward it. background = 0 gives strict conditioning.
inline Condition bind_condition(const Condition& semantic, const MixtureModel& mixture,
                                double background) {
  require(background >= 0.0 && background < 1.0, "background weight must lie in [0, 1)");
  Condition out;
  bool any = false;
  for (const auto& id : mixture.concepts()) {
    const double w = semantic.weight_of(id);
    if (w > 0.0) {
      any = true;
      out.concepts.push_back(id);
      out.weights.push_back(w);
    } else if (background > 0.0) {
      out.concepts.push_back(id);
      out.weights.push_back(background);
    }
  }
  if (!any) fail(ErrorKind::domain, "condition names no concept with a prototype");
  return out;
}

// ---------------------------------------------------------------------------
// Shared-phase cache

struct CacheKey {
  std::uint64_t condition = 0;
  int shared_steps = 0;
  std::uint64_t schedule = 0;
  std::uint64_t seed = 0;

  std::uint64_t hash() const {
    std::uint64_t h = mix64(condition, static_cast<std::uint64_t>(shared_steps));
    h = mix64(h, schedule);
    return mix64(h, seed);
  }

  friend bool operator==(const CacheKey&, const CacheKey&) = default;
};

/// Thread-safe map from shared-phase identity to handoff latent.
class SharedCache {
 public:
  /// Throws an integrity error when the stored entry does not belong to `key`
  /// or has the wrong shape.
  std::optional<Latent> find(const CacheKey& key, const LatentShape& expected) {
    std::lock_guard lock(mutex_);
    auto it = entries_.find(key.hash());
    if (it == entries_.end()) {
      ++misses_;
      return std::nullopt;
    }
    const auto& [stored_key, latent] = it->second;
    if (!(stored_key == key))
      fail(ErrorKind::integrity, "shared cache entry fingerprint does not match its key");
    if (latent.width != expected.width || latent.height != expected.height ||
        latent.step != expected.step)
      fail(ErrorKind::integrity, "shared cache entry has the wrong shape or chain position");
    ++hits_;
    return latent;
  }

  void store(const CacheKey& key, Latent latent) {
    std::lock_guard lock(mutex_);
    entries_.insert_or_assign(key.hash(), std::make_pair(key, std::move(latent)));
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return entries_.size();
  }
  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }
  std::size_t misses() const {
    std::lock_guard lock(mutex_);
    return misses_;
  }

 private:
  mutable std::mutex mutex_;
  std::unordered_map<std::uint64_t, std::pair<CacheKey, Latent>> entries_;
  std::size_t hits_ = 0;
  std::size_t misses_ = 0;
};

// ---------------------------------------------------------------------------
// Execution

struct ExecuteOptions {
  QuantizationSpec qspec;
  double background_weight = 0.001;
  double fixed_rate_bps = 1e6;
  bool with_reference = true;  // also run each tail on the flip-free handoff
};

struct UserOutcome {
  std::string user;
  std::size_t group = 0;
  int shared_steps = 0;
  int local_steps = 0;
  Latent handoff;    // as it left the executor
  Latent received;   // after quantization and the link
  Latent final;
  Latent reference;  // tail run on the flip-free handoff (empty unless requested)
  std::size_t flips = 0;

  friend bool operator==(const UserOutcome&, const UserOutcome&) = default;
};

struct RunResult {
  std::vector<UserOutcome> users;     // group order, then member order
  std::vector<int> shared_charged;    // shared steps actually computed per group
  CostReport costs;

  const UserOutcome& user(const std::string& id) const {
    for (const auto& u : users)
      if (u.user == id) return u;
    fail(ErrorKind::domain, "no outcome for user '" + id + "'");
  }
};

/// Stream index for a user's tail and link.
inline std::uint64_t user_stream_index(const std::string& user) { return fnv1a(user); }

inline RunResult execute(const TaskPlan& tp, const std::map<std::string, PromptSpec>& prompts,
                         const ProfileMap& profiles, const MixtureModel& mixture, const NoiseSchedule& schedule,
                         const RngStreams& streams, SharedCache* cache,
                         const ExecuteOptions& options = {}) {
  tp.validate();
  require(tp.total_steps == schedule.steps(), "plan and schedule disagree on T");
  RunResult result;
  std::vector<bool> cached(tp.groups.size(), false);

  for (std::size_t gi = 0; gi < tp.groups.size(); ++gi) {
    const auto& g = tp.groups[gi];
    const Condition shared = bind_condition(g.shared_condition, mixture, options.background_weight);
    const std::uint64_t shared_index = shared.fingerprint();
    const CacheKey key{shared_index, g.shared_steps, schedule.fingerprint(), streams.seed()};
    const LatentShape shape{mixture.width(), mixture.height(), schedule.steps() - g.shared_steps};

    std::optional<Latent> handoff;
    if (cache) handoff = cache->find(key, shape);
    if (handoff) {
      cached[gi] = true;
      result.shared_charged.push_back(0);
    } else {
      Rng init = streams.stream("init", shared_index);
      Rng shared_rng = streams.stream("shared", shared_index);
      handoff = shared_phase(schedule, mixture, shared, g.shared_steps, init, shared_rng);
      if (cache) cache->store(key, *handoff);
      result.shared_charged.push_back(g.shared_steps);
    }

    for (const auto& task : g.tasks) {
      auto prompt = prompts.find(task.user);
      require(prompt != prompts.end(), "no prompt for user '" + task.user + "'");
      const Condition local =
          bind_condition(Condition::uniform(prompt->second.concepts), mixture, options.background_weight);
      const std::uint64_t idx = user_stream_index(task.user);

      UserOutcome out;
      out.user = task.user;
      out.group = gi;
      out.shared_steps = g.shared_steps;
      out.local_steps = task.local_steps;
      out.handoff = *handoff;
      std::optional<Latent> clean;
      if (task.link) {
        Rng channel = streams.stream("channel", idx);
        out.received = send_latent(*handoff, options.qspec, *task.link, channel, &out.flips);
        if (options.with_reference)
          clean = dequantize(quantize(*handoff, options.qspec), options.qspec,
                             {handoff->width, handoff->height, handoff->step});
      } else {
        out.received = *handoff;
        if (options.with_reference) clean = *handoff;
      }
      Rng local_rng = streams.stream("local", idx);
      out.final = denoise(out.received, 0, mixture, local, schedule, local_rng);
      if (clean) {
        Rng ref_rng = streams.stream("local", idx);
        out.reference = denoise(std::move(*clean), 0, mixture, local, schedule, ref_rng);
      }
      result.users.push_back(std::move(out));
    }
  }

  CostOptions copt;
  copt.fixed_rate_bps = options.fixed_rate_bps;
  copt.shared_cached = cached;
  result.costs = cost(tp, profiles, payload_bits(mixture.pixels(), options.qspec), copt);
  return result;
}

}  // namespace cdiff
