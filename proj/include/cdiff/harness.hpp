#pragma once

// Scenario configuration, sweep execution and CSV/PGM artifact emission.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "cdiff/channel.hpp"
#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"
#include "cdiff/image_io.hpp"
#include "cdiff/metrics.hpp"
#include "cdiff/orchestrator.hpp"
#include "cdiff/prototypes.hpp"
#include "cdiff/rng.hpp"
#include "cdiff/semantic.hpp"

namespace cdiff {

inline constexpr int kConfigSchemaVersion = 1;

enum class Grouping { cluster, forced };

struct ScenarioConfig {
  std::string scenario = "scenario";
  std::uint64_t seed = 2023;
  int steps = 11;
  double beta_start = 0.1;
  double beta_end = 0.6;
  int width = 16;
  int height = 16;
  double sigma0 = 0.05;
  double background_weight = 0.001;
  std::vector<std::string> concepts = procedural_concepts();
  std::map<std::string, std::string> prototype_paths;  // concept -> PGM
  std::optional<std::string> graph_path;
  std::vector<std::pair<std::string, std::string>> prompts;  // user -> text, file order
  std::vector<std::string> architectures{"edge"};
  std::vector<int> shared_steps{5};
  std::string channel = "fixed";
  std::vector<double> channel_values{0.0};  // BER for fixed, SNR otherwise
  std::optional<double> bandwidth_hz;
  double fixed_rate_bps = 1e6;
  QuantizationSpec qspec;
  double threshold = 0.5;
  SharedPolicy policy = SharedPolicy::leader;
  Grouping grouping = Grouping::cluster;
  bool cache = true;
  int repetitions = 50;
  std::vector<FadePoint> fade_timeline;
  AdaptParams adapt;
  ProfileMap devices;  // filled with defaults for the edge and every user

  std::size_t cell_count() const {
    return architectures.size() * shared_steps.size() * channel_values.size();
  }
};

// ---------------------------------------------------------------------------
// Config parsing
//
// Flat `key = value` lines; lists are `[a, b, c]`; '#' starts a comment.

namespace detail {

inline std::vector<std::string> split_list(const std::string& value) {
  std::string body = trim(value);
  if (body.size() >= 2 && body.front() == '[' && body.back() == ']') body = body.substr(1, body.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct ConfigReader {
  std::string source;
  int line = 0;

  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorKind::config, source + ":" + std::to_string(line) + ": " + msg);
  }

  double number(const std::string& key, const std::string& v) const {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      error("key '" + key + "' expects a number, got '" + v + "'");
    }
  }

  long long integer(const std::string& key, const std::string& v) const {
    const double d = number(key, v);
    if (d != std::floor(d)) error("key '" + key + "' expects an integer, got '" + v + "'");
    return static_cast<long long>(d);
  }

  bool boolean(const std::string& key, const std::string& v) const {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    error("key '" + key + "' expects true/false, got '" + v + "'");
  }

  std::vector<double> numbers(const std::string& key, const std::string& v) const {
    std::vector<double> out;
    for (const auto& item : split_list(v)) out.push_back(number(key, item));
    if (out.empty()) error("key '" + key + "' needs a non-empty list");
    return out;
  }
};

inline bool valid_identifier(const std::string& s) {
  if (s.empty()) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
  });
}

inline std::string resolve_path(const std::string& base_dir, const std::string& p) {
  std::filesystem::path path(p);
  if (path.is_absolute() || base_dir.empty()) return path.string();
  return (std::filesystem::path(base_dir) / path).string();
}

inline void apply_device_field(ConfigReader& r, DeviceProfile& d, const std::string& field,
                               const std::string& v, const std::string& key) {
  if (field == "role") {
    if (v == "edge") d.role = DeviceRole::edge;
    else if (v == "user") d.role = DeviceRole::user;
    else r.error("key '" + key + "' expects edge or user");
  } else if (field == "compute_rate") {
    d.compute_rate = r.number(key, v);
  } else if (field == "energy_per_step") {
    d.energy_per_step = r.number(key, v);
  } else if (field == "power_class") {
    if (v == "low") d.power_class = PowerClass::low;
    else if (v == "medium") d.power_class = PowerClass::medium;
    else if (v == "high") d.power_class = PowerClass::high;
    else r.error("key '" + key + "' expects low, medium or high");
  } else if (field == "uplink_hz") {
    d.uplink_hz = r.number(key, v);
  } else if (field == "downlink_hz") {
    d.downlink_hz = r.number(key, v);
  } else {
    r.error("unknown key '" + key + "'");
  }
}

}  // namespace detail

/// Parses config text. Relative asset paths resolve against `base_dir`.
inline ScenarioConfig parse_config(std::istream& in, const std::string& source = "<config>",
                                   const std::string& base_dir = {}) {
  ScenarioConfig cfg;
  detail::ConfigReader r{source, 0};
  std::optional<long long> version;
  std::set<std::string> seen;
  std::map<std::string, std::map<std::string, std::pair<int, std::string>>> device_fields;
  bool channel_values_set = false;
  std::string raw;

  while (std::getline(in, raw)) {
    ++r.line;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) r.error("expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string v = trim(line.substr(eq + 1));
    if (key.empty()) r.error("empty key");
    if (v.empty()) r.error("key '" + key + "' has no value");
    if (!seen.insert(key).second) r.error("duplicate key '" + key + "'");

    if (key.rfind("prompt.", 0) == 0) {
      const std::string user = key.substr(7);
      if (!detail::valid_identifier(user)) r.error("invalid user id in key '" + key + "'");
      cfg.prompts.emplace_back(user, v);
    } else if (key.rfind("prototype.", 0) == 0) {
      cfg.prototype_paths[key.substr(10)] = detail::resolve_path(base_dir, v);
    } else if (key.rfind("device.", 0) == 0) {
      const auto dot = key.find('.', 7);
      if (dot == std::string::npos) r.error("unknown key '" + key + "'");
      const std::string id = key.substr(7, dot - 7);
      if (!detail::valid_identifier(id)) r.error("invalid device id in key '" + key + "'");
      device_fields[id][key.substr(dot + 1)] = {r.line, v};
    } else if (key == "schema_version") {
      version = r.integer(key, v);
    } else if (key == "scenario") {
      if (!detail::valid_identifier(v)) r.error("scenario name must be alphanumeric/_/-");
      cfg.scenario = v;
    } else if (key == "seed") {
      const long long s = r.integer(key, v);
      if (s < 0) r.error("seed must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(s);
    } else if (key == "steps") {
      cfg.steps = static_cast<int>(r.integer(key, v));
    } else if (key == "beta_start") {
      cfg.beta_start = r.number(key, v);
    } else if (key == "beta_end") {
      cfg.beta_end = r.number(key, v);
    } else if (key == "width") {
      cfg.width = static_cast<int>(r.integer(key, v));
    } else if (key == "height") {
      cfg.height = static_cast<int>(r.integer(key, v));
    } else if (key == "sigma0") {
      cfg.sigma0 = r.number(key, v);
    } else if (key == "background_weight") {
      cfg.background_weight = r.number(key, v);
    } else if (key == "concepts") {
      cfg.concepts = detail::split_list(v);
      if (cfg.concepts.empty()) r.error("key 'concepts' needs a non-empty list");
    } else if (key == "graph") {
      cfg.graph_path = detail::resolve_path(base_dir, v);
    } else if (key == "architecture") {
      cfg.architectures = detail::split_list(v);
      if (cfg.architectures.empty()) r.error("key 'architecture' needs a non-empty list");
      for (const auto& a : cfg.architectures) {
        try {
          parse_architecture(a);
        } catch (const Error& e) {
          r.error(e.what());
        }
      }
    } else if (key == "shared_steps") {
      cfg.shared_steps.clear();
      for (double d : r.numbers(key, v)) {
        if (d != std::floor(d)) r.error("key 'shared_steps' expects integers");
        cfg.shared_steps.push_back(static_cast<int>(d));
      }
    } else if (key == "channel") {
      if (v != "fixed" && v != "awgn" && v != "rayleigh")
        r.error("key 'channel' expects fixed, awgn or rayleigh");
      cfg.channel = v;
    } else if (key == "ber" || key == "snr") {
      if (channel_values_set) r.error("only one of 'ber' and 'snr' may be given");
      channel_values_set = true;
      cfg.channel_values = r.numbers(key, v);
      if (key == "snr" && cfg.channel == "fixed") cfg.channel = "awgn";
    } else if (key == "bandwidth_hz") {
      cfg.bandwidth_hz = r.number(key, v);
    } else if (key == "fixed_rate_bps") {
      cfg.fixed_rate_bps = r.number(key, v);
    } else if (key == "quant_bits") {
      cfg.qspec.bits = static_cast<int>(r.integer(key, v));
    } else if (key == "quant_lo") {
      cfg.qspec.lo = r.number(key, v);
    } else if (key == "quant_hi") {
      cfg.qspec.hi = r.number(key, v);
    } else if (key == "threshold") {
      cfg.threshold = r.number(key, v);
    } else if (key == "policy") {
      if (v != "leader" && v != "union") r.error("key 'policy' expects leader or union");
      cfg.policy = parse_policy(v);
    } else if (key == "grouping") {
      if (v == "cluster") cfg.grouping = Grouping::cluster;
      else if (v == "forced") cfg.grouping = Grouping::forced;
      else r.error("key 'grouping' expects cluster or forced");
    } else if (key == "cache") {
      cfg.cache = r.boolean(key, v);
    } else if (key == "repetitions") {
      cfg.repetitions = static_cast<int>(r.integer(key, v));
    } else if (key == "fade_timeline") {
      for (const auto& item : detail::split_list(v)) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) r.error("fade_timeline entries are time:snr");
        cfg.fade_timeline.push_back({r.number(key, trim(item.substr(0, colon))),
                                     r.number(key, trim(item.substr(colon + 1)))});
      }
    } else if (key == "deep_fade_snr") {
      cfg.adapt.deep_fade_snr = r.number(key, v);
    } else if (key == "split_increment") {
      cfg.adapt.increment = static_cast<int>(r.integer(key, v));
    } else {
      r.error("unknown key '" + key + "'");
    }
  }

  // Whole-file checks report line 0.
  r.line = 0;
  if (version && *version != kConfigSchemaVersion)
    r.error("unsupported schema_version " + std::to_string(*version));
  if (!seen.contains("seed")) r.error("missing required key 'seed'");
  if (cfg.prompts.empty()) r.error("at least one 'prompt.<user>' key is required");
  if (cfg.steps < 1) r.error("key 'steps' must be >= 1");
  if (cfg.width < 1 || cfg.height < 1) r.error("image dimensions must be positive");
  if (cfg.sigma0 < 0) r.error("key 'sigma0' must be non-negative");
  if (cfg.background_weight < 0 || cfg.background_weight >= 1)
    r.error("key 'background_weight' must lie in [0, 1)");
  if (cfg.repetitions < 1) r.error("key 'repetitions' must be >= 1");
  if (cfg.threshold < 0) r.error("key 'threshold' must be non-negative");
  for (int s : cfg.shared_steps)
    if (s < 0 || s > cfg.steps) r.error("key 'shared_steps' values must lie in [0, steps]");
  for (double c : cfg.channel_values) {
    if (cfg.channel == "fixed" && (c < 0 || c > 1)) r.error("key 'ber' values must lie in [0, 1]");
    if (cfg.channel != "fixed" && c <= 0) r.error("key 'snr' values must be positive");
  }
  if (cfg.channel != "fixed" && !channel_values_set)
    r.error("channel '" + cfg.channel + "' needs an 'snr' list");
  try {
    cfg.qspec.validate();
  } catch (const Error& e) {
    r.error(e.what());
  }
  for (const auto& [concept_id, path] : cfg.prototype_paths) {
    if (std::find(cfg.concepts.begin(), cfg.concepts.end(), concept_id) == cfg.concepts.end())
      r.error("prototype given for concept '" + concept_id + "' not listed in 'concepts'");
    if (!std::filesystem::exists(path)) r.error("prototype asset '" + path + "' does not exist");
  }
  if (cfg.graph_path && !std::filesystem::exists(*cfg.graph_path))
    r.error("graph asset '" + *cfg.graph_path + "' does not exist");

  // Devices: defaults for the edge and every user, then overrides.
  cfg.devices.emplace("edge", default_edge_profile("edge"));
  for (const auto& [user, text] : cfg.prompts) {
    if (user == "edge") r.error("'edge' is reserved for the edge server");
    cfg.devices.emplace(user, default_user_profile(user));
  }
  for (const auto& [id, fields] : device_fields) {
    auto it = cfg.devices.find(id);
    if (it == cfg.devices.end()) {
      DeviceProfile p = default_user_profile(id);
      if (auto role = fields.find("role"); role != fields.end() && role->second.second == "edge")
        p = default_edge_profile(id);
      it = cfg.devices.emplace(id, p).first;
    }
    for (const auto& [field, entry] : fields) {
      r.line = entry.first;
      detail::apply_device_field(r, it->second, field, entry.second, "device." + id + "." + field);
    }
    try {
      it->second.validate();
    } catch (const Error& e) {
      r.error(e.what());
    }
  }
  return cfg;
}

inline ScenarioConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  std::istringstream in(text);
  return parse_config(in, source);
}

inline ScenarioConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open config '" + path + "'");
  return parse_config(in, path, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Presets

inline const std::map<std::string, std::string>& preset_texts() {
  static const std::map<std::string, std::string> presets{
      {"ber_sweep", R"(# user 1 runs 5 shared steps and sends the handoff to user 2 over a lossy link
schema_version = 1
scenario = ber_sweep
seed = 2023
prompt.user1 = Apple on Table
prompt.user2 = Lemon on Table
architecture = d2d
grouping = forced
shared_steps = 5
channel = fixed
ber = [0, 0.005, 0.01, 0.02, 0.05, 0.1]
repetitions = 50
)"},
      {"split_sweep", R"(# growing shared phase leaves user 2 too few steps of its own
schema_version = 1
scenario = split_sweep
seed = 2023
prompt.user1 = Apple on Table
prompt.user2 = Lemon on Table
architecture = d2d
grouping = forced
shared_steps = [5, 7, 9]
channel = fixed
ber = [0]
repetitions = 50
)"},
      {"mismatch", R"(# a dissimilar prompt forced into the apple group (user2) next to a similar one (user3)
schema_version = 1
scenario = mismatch
seed = 2023
prompt.user1 = Apple on Table
prompt.user2 = A bird in the sky
prompt.user3 = Lemon on Table
architecture = cluster
grouping = forced
shared_steps = 4
channel = fixed
ber = [0]
repetitions = 50
)"},
      {"arch_compare", R"(# the same clustered workload under each multi-user architecture
schema_version = 1
scenario = arch_compare
seed = 2023
prompt.user1 = Apple on Table
prompt.user2 = Lemon on Table
prompt.user3 = A bird in the sky
prompt.user4 = A cat in the grass
architecture = [edge, cluster, cluster_edge]
grouping = cluster
shared_steps = 5
channel = awgn
snr = [3]
repetitions = 50
)"},
  };
  return presets;
}

inline ScenarioConfig preset_config(const std::string& name) {
  const auto& presets = preset_texts();
  auto it = presets.find(name);
  if (it == presets.end()) fail(ErrorKind::config, "unknown preset '" + name + "'");
  return parse_config(it->second, "<preset " + name + ">");
}

// ---------------------------------------------------------------------------
// Results

struct ResultRow {
  std::string scenario;
  std::size_t cell = 0;
  std::string architecture;
  int repetition = 0;
  std::string user;
  std::size_t group = 0;
  std::string executor;
  int shared_steps = 0;
  int local_steps = 0;
  std::string channel;
  double ber = 0.0;
  double snr = 0.0;  // 0 when the link model carries no SNR
  double mse_ref = 0, psnr_ref = 0, ssim_ref = 0;
  double mse_proto = 0, psnr_proto = 0, ssim_proto = 0;
  std::string predicted;
  int fidelity = 0;
  double margin = 0.0;
  std::size_t flip_count = 0;
  double latency_s = 0.0;
  double energy_j = 0.0;
};

inline const std::vector<std::string>& result_columns() {
  static const std::vector<std::string> cols{
      "scenario",  "cell",       "architecture", "repetition", "user",      "group",
      "executor",  "shared_steps", "local_steps", "channel",   "ber",       "snr",
      "mse_ref",   "psnr_ref",   "ssim_ref",     "mse_proto",  "psnr_proto", "ssim_proto",
      "predicted", "fidelity",   "margin",       "flip_count", "latency_s", "energy_j"};
  return cols;
}

inline std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline std::string to_csv_line(const ResultRow& r) {
  std::ostringstream o;
  o << r.scenario << ',' << r.cell << ',' << r.architecture << ',' << r.repetition << ',' << r.user
    << ',' << r.group << ',' << r.executor << ',' << r.shared_steps << ',' << r.local_steps << ','
    << r.channel << ',' << format_number(r.ber) << ',' << format_number(r.snr) << ','
    << format_number(r.mse_ref) << ',' << format_number(r.psnr_ref) << ','
    << format_number(r.ssim_ref) << ',' << format_number(r.mse_proto) << ','
    << format_number(r.psnr_proto) << ',' << format_number(r.ssim_proto) << ',' << r.predicted
    << ',' << r.fidelity << ',' << format_number(r.margin) << ',' << r.flip_count << ','
    << format_number(r.latency_s) << ',' << format_number(r.energy_j);
  return o.str();
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string out;
  const auto& cols = result_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += '\n';
  for (const auto& r : rows) out += to_csv_line(r) + '\n';
  return out;
}

// ---------------------------------------------------------------------------
// Scenario execution

/// Everything derived from a config that stays fixed across cells.
struct Scenario {
  ScenarioConfig config;
  NoiseSchedule schedule;
  MixtureModel mixture;
  ConceptGraph graph;
  std::vector<PromptSpec> prompts;  // config order
  std::map<std::string, PromptSpec> prompt_map;
  ClusterAssignment assignment;
};

inline Scenario prepare(const ScenarioConfig& cfg) {
  NoiseSchedule schedule = build_schedule(cfg.steps, cfg.beta_start, cfg.beta_end);
  std::map<std::string, std::vector<double>> overrides;
  for (const auto& [concept_id, path] : cfg.prototype_paths) {
    Latent img = read_pgm(path);
    if (img.width != cfg.width || img.height != cfg.height)
      fail(ErrorKind::config, "prototype '" + path + "' does not match the configured image size");
    overrides[concept_id] = img.data;
  }
  MixtureModel mixture = prototype_mixture(cfg.concepts, cfg.width, cfg.height, cfg.sigma0, overrides);
  ConceptGraph graph = cfg.graph_path ? load_graph(*cfg.graph_path) : default_graph();
  std::vector<PromptSpec> prompts;
  std::map<std::string, PromptSpec> prompt_map;
  for (const auto& [user, text] : cfg.prompts) {
    prompts.push_back(parse_prompt(text, graph, user));
    prompt_map[user] = prompts.back();
  }
  ClusterAssignment assignment = cfg.grouping == Grouping::forced
                                     ? force_single_group(prompts, cfg.policy)
                                     : cluster(prompts, cfg.threshold, graph, cfg.policy);
  return {cfg, std::move(schedule), std::move(mixture), std::move(graph), std::move(prompts),
          std::move(prompt_map), std::move(assignment)};
}

struct CellSpec {
  std::size_t index = 0;
  std::string architecture;
  int shared_steps = 0;
  ChannelModel link;
};

inline std::vector<CellSpec> cells_of(const ScenarioConfig& cfg) {
  std::vector<CellSpec> cells;
  for (const auto& arch : cfg.architectures)
    for (int s : cfg.shared_steps)
      for (double v : cfg.channel_values) {
        ChannelModel m = cfg.channel == "fixed" ? ChannelModel::fixed(v)
                         : cfg.channel == "awgn" ? ChannelModel::awgn(v)
                                                 : ChannelModel::rayleigh(v);
        m.bandwidth_hz = cfg.bandwidth_hz;
        cells.push_back({cells.size(), arch, s, m});
      }
  return cells;
}

/// Prototype of the first prompt concept that has one.
inline const MixtureComponent* subject_prototype(const PromptSpec& prompt, const MixtureModel& m) {
  for (const auto& c : prompt.concepts)
    for (const auto& comp : m.components())
      if (comp.concept_id == c) return &comp;
  return nullptr;
}

struct CellRun {
  std::vector<ResultRow> rows;
  RunResult result;
};

/// One (cell, repetition). Diffusion and channel streams depend on the
/// repetition only, so cells differ solely through their parameters.
inline CellRun run_cell(const Scenario& sc, const CellSpec& cell, int repetition) {
  const auto& cfg = sc.config;
  const RngStreams streams =
      RngStreams(cfg.seed).child({static_cast<std::uint64_t>(repetition)});
  TaskPlan tp = plan(parse_architecture(cell.architecture), sc.assignment, sc.prompt_map,
                     cfg.devices, cfg.steps, cell.shared_steps, cfg.policy, cell.link);
  if (!cfg.fade_timeline.empty()) tp = adapt_split(std::move(tp), cfg.fade_timeline, cfg.devices, cfg.adapt);

  ExecuteOptions opt;
  opt.qspec = cfg.qspec;
  opt.background_weight = cfg.background_weight;
  opt.fixed_rate_bps = cfg.fixed_rate_bps;
  opt.with_reference = true;
  std::optional<SharedCache> cache;
  if (cfg.cache) cache.emplace();
  CellRun run;
  run.result = execute(tp, sc.prompt_map, cfg.devices, sc.mixture, sc.schedule, streams,
                       cache ? &*cache : nullptr, opt);

  for (const auto& u : run.result.users) {
    const auto& prompt = sc.prompt_map.at(u.user);
    const auto& g = tp.groups[u.group];
    const Latent out = clamp_unit(u.final);
    const Latent ref = clamp_unit(u.reference);
    const auto* proto = subject_prototype(prompt, sc.mixture);
    require(proto != nullptr, "prompt of '" + u.user + "' has no prototype concept");
    const Latent proto_img(proto->mean, sc.mixture.width(), sc.mixture.height(), 0);
    const auto& link = g.tasks[std::distance(g.members.begin(),
                                             std::find(g.members.begin(), g.members.end(), u.user))]
                           .link;
    const auto verdict = classify(out, sc.mixture);

    ResultRow row;
    row.scenario = cfg.scenario;
    row.cell = cell.index;
    row.architecture = cell.architecture;
    row.repetition = repetition;
    row.user = u.user;
    row.group = u.group;
    row.executor = g.executor;
    row.shared_steps = u.shared_steps;
    row.local_steps = u.local_steps;
    row.channel = link ? link->name() : "local";
    row.ber = link ? ber(*link) : 0.0;
    row.snr = link ? link->snr().value_or(0.0) : 0.0;
    row.mse_ref = mse(out, ref);
    row.psnr_ref = psnr_from_mse(row.mse_ref);
    row.ssim_ref = ssim(out, ref);
    row.mse_proto = mse(out, proto_img);
    row.psnr_proto = psnr_from_mse(row.mse_proto);
    row.ssim_proto = ssim(out, proto_img);
    row.predicted = verdict.concept_id;
    row.fidelity = std::find(prompt.concepts.begin(), prompt.concepts.end(), verdict.concept_id) !=
                           prompt.concepts.end()
                       ? 1
                       : 0;
    row.margin = verdict.margin;
    row.flip_count = u.flips;
    row.latency_s = run.result.costs.user_latency_s.at(u.user);
    row.energy_j = run.result.costs.device(u.user)->energy_j;
    run.rows.push_back(std::move(row));
  }
  return run;
}

struct ScenarioOutput {
  std::vector<ResultRow> rows;
  std::string csv_path;
  std::string summary_path;
  std::vector<std::string> images;
};

/// Runs every cell x repetition on `jobs` threads, then writes artifacts from
/// a single thread in deterministic order.
inline ScenarioOutput run_scenario(const ScenarioConfig& cfg, const std::string& out_dir,
                                   int jobs = 1);

/// Aggregates a ResultRow CSV into per-(scenario, cell, user) mean/std rows.
inline std::string summarize_csv(const std::string& csv_text, const std::string& source = "<csv>");

inline std::string emit_summary(const std::string& csv_path, const std::string& out_path) {
  std::ifstream in(csv_path);
  if (!in) fail(ErrorKind::io, "cannot open CSV '" + csv_path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string summary = summarize_csv(buf.str(), csv_path);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write '" + out_path + "'");
  out << summary;
  return summary;
}

inline ScenarioOutput run_scenario(const ScenarioConfig& cfg, const std::string& out_dir, int jobs) {
  require(jobs >= 1, "jobs must be >= 1");
  const Scenario sc = prepare(cfg);
  const auto cells = cells_of(cfg);
  const std::size_t reps = static_cast<std::size_t>(cfg.repetitions);
  const std::size_t tasks = cells.size() * reps;

  std::vector<CellRun> runs(tasks);
  std::vector<std::exception_ptr> errors(tasks);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      try {
        runs[t] = run_cell(sc, cells[t / reps], static_cast<int>(t % reps));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  const int threads = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(jobs), tasks));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create output directory '" + out_dir + "'");

  ScenarioOutput out;
  for (const auto& run : runs) out.rows.insert(out.rows.end(), run.rows.begin(), run.rows.end());

  const std::filesystem::path dir(out_dir);
  out.csv_path = (dir / (cfg.scenario + ".csv")).string();
  const std::string csv = to_csv(out.rows);
  write_file(out.csv_path, std::vector<std::uint8_t>(csv.begin(), csv.end()));

  for (const auto& cell : cells) {
    const auto& run = runs[cell.index * reps];  // repetition 0
    for (const auto& u : run.result.users) {
      const std::string stem = cfg.scenario + "_c" + std::to_string(cell.index) + "_" + u.user;
      for (const auto& [kind, img] : {std::pair<std::string, const Latent*>{"final", &u.final},
                                      {"handoff", &u.received}}) {
        const std::string path = (dir / (stem + "_" + kind + ".pgm")).string();
        write_pgm(path, *img);
        out.images.push_back(path);
      }
    }
  }

  out.summary_path = (dir / (cfg.scenario + "_summary.csv")).string();
  const std::string summary = summarize_csv(csv, out.csv_path);
  write_file(out.summary_path, std::vector<std::uint8_t>(summary.begin(), summary.end()));
  return out;
}

// ---------------------------------------------------------------------------
// Summary

inline const std::vector<std::string>& summary_key_columns() {
  static const std::vector<std::string> cols{"scenario", "cell", "architecture", "user",
                                             "shared_steps", "channel", "ber", "snr"};
  return cols;
}

inline const std::vector<std::string>& summary_metric_columns() {
  static const std::vector<std::string> cols{"mse_ref",   "psnr_ref",  "ssim_ref",  "mse_proto",
                                             "psnr_proto", "ssim_proto", "fidelity", "margin",
                                             "flip_count", "latency_s", "energy_j"};
  return cols;
}

inline std::string summarize_csv(const std::string& csv_text, const std::string& source) {
  std::istringstream in(csv_text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::stringstream ss(l);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(trim(field));
    if (!l.empty() && l.back() == ',') out.emplace_back();
    return out;
  };
  if (!std::getline(in, line)) fail(ErrorKind::config, source + ": empty CSV");
  const auto header = split(line);
  auto column = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) fail(ErrorKind::config, source + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  std::vector<std::size_t> key_idx, metric_idx;
  for (const auto& c : summary_key_columns()) key_idx.push_back(column(c));
  for (const auto& c : summary_metric_columns()) metric_idx.push_back(column(c));

  struct Acc {
    std::vector<std::string> key;
    std::vector<std::vector<double>> values;
  };
  std::vector<Acc> groups;
  std::map<std::vector<std::string>, std::size_t> index;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split(line);
    if (fields.size() != header.size())
      fail(ErrorKind::config, source + ":" + std::to_string(line_no) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    std::vector<std::string> key;
    for (auto k : key_idx) key.push_back(fields[k]);
    auto [it, inserted] = index.emplace(key, groups.size());
    if (inserted) groups.push_back({key, std::vector<std::vector<double>>(metric_idx.size())});
    auto& acc = groups[it->second];
    for (std::size_t m = 0; m < metric_idx.size(); ++m) {
      const std::string& f = fields[metric_idx[m]];
      try {
        std::size_t used = 0;
        const double v = std::stod(f, &used);
        if (used != f.size()) throw std::invalid_argument(f);
        acc.values[m].push_back(v);
      } catch (const std::exception&) {
        fail(ErrorKind::config, source + ":" + std::to_string(line_no) + ": column '" +
                                    summary_metric_columns()[m] + "' is not numeric");
      }
    }
  }

  std::ostringstream out;
  for (const auto& c : summary_key_columns()) out << c << ',';
  out << "n";
  for (const auto& c : summary_metric_columns()) out << ',' << c << "_mean," << c << "_std";
  out << '\n';
  for (const auto& g : groups) {
    for (const auto& k : g.key) out << k << ',';
    const std::size_t n = g.values.empty() ? 0 : g.values[0].size();
    out << n;
    for (const auto& vals : g.values) {
      double mean = 0.0;
      for (double v : vals) mean += v;
      mean /= static_cast<double>(vals.size());
      double ss = 0.0;
      for (double v : vals) ss += (v - mean) * (v - mean);
      const double sd = vals.size() > 1 ? std::sqrt(ss / static_cast<double>(vals.size() - 1)) : 0.0;
      out << ',' << format_number(mean) << ',' << format_number(sd);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace cdiff
