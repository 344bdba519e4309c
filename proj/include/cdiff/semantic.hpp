#pragma once

// Prompt parsing, knowledge-graph similarity and leader-based user grouping.

#include <algorithm>
#include <cctype>
#include <deque>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cdiff/diffusion.hpp"
#include "cdiff/error.hpp"

namespace cdiff {

inline std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

/// Small undirected concept graph with a surface-word lexicon.
class ConceptGraph {
 public:
  struct Node {
    std::string id;
    std::string label;
  };

  static constexpr int kUnreachable = std::numeric_limits<int>::max();

  void add_node(std::string id, std::string label = {}) {
    require(!id.empty(), "concept id must be non-empty");
    if (index_.contains(id)) fail(ErrorKind::domain, "duplicate concept id '" + id + "'");
    index_.emplace(id, nodes_.size());
    if (label.empty()) label = id;
    nodes_.push_back({std::move(id), std::move(label)});
    adjacency_.emplace_back();
  }

  void add_edge(const std::string& a, const std::string& b) {
    const auto ia = find(a);
    const auto ib = find(b);
    if (!ia || !ib)
      fail(ErrorKind::domain, "edge references missing concept '" + (ia ? b : a) + "'");
    require(*ia != *ib, "self-loop on concept '" + a + "'");
    auto& na = adjacency_[*ia];
    if (std::find(na.begin(), na.end(), *ib) != na.end()) return;
    na.push_back(*ib);
    adjacency_[*ib].push_back(*ia);
  }

  void add_word(const std::string& word, const std::string& concept_id) {
    if (!find(concept_id))
      fail(ErrorKind::domain, "lexicon entry '" + word + "' maps to missing concept '" + concept_id + "'");
    lexicon_[to_lower(word)] = concept_id;
  }

  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(const std::string& id) const { return index_.contains(id); }

  std::optional<std::string> lookup_word(const std::string& word) const {
    auto it = lexicon_.find(to_lower(word));
    if (it == lexicon_.end()) return std::nullopt;
    return it->second;
  }

  /// Hop distance; kUnreachable when no path exists.
  int distance(const std::string& a, const std::string& b) const {
    const auto ia = find(a);
    const auto ib = find(b);
    require(ia && ib, "distance query on unknown concept");
    if (*ia == *ib) return 0;
    std::vector<int> dist(nodes_.size(), kUnreachable);
    std::deque<std::size_t> frontier{*ia};
    dist[*ia] = 0;
    while (!frontier.empty()) {
      const auto u = frontier.front();
      frontier.pop_front();
      for (auto v : adjacency_[u]) {
        if (dist[v] != kUnreachable) continue;
        dist[v] = dist[u] + 1;
        if (v == *ib) return dist[v];
        frontier.push_back(v);
      }
    }
    return kUnreachable;
  }

  bool connected() const {
    if (nodes_.empty()) return true;
    std::vector<bool> seen(nodes_.size(), false);
    std::deque<std::size_t> frontier{0};
    seen[0] = true;
    std::size_t count = 1;
    while (!frontier.empty()) {
      const auto u = frontier.front();
      frontier.pop_front();
      for (auto v : adjacency_[u]) {
        if (seen[v]) continue;
        seen[v] = true;
        ++count;
        frontier.push_back(v);
      }
    }
    return count == nodes_.size();
  }

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  const std::map<std::string, std::string>& lexicon() const noexcept { return lexicon_; }

  std::vector<std::pair<std::string, std::string>> edges() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (std::size_t u = 0; u < nodes_.size(); ++u)
      for (auto v : adjacency_[u])
        if (u < v) out.emplace_back(nodes_[u].id, nodes_[v].id);
    return out;
  }

 private:
  std::vector<Node> nodes_;
  std::vector<std::vector<std::size_t>> adjacency_;
  std::unordered_map<std::string, std::size_t> index_;
  std::map<std::string, std::string> lexicon_;
};

// ---------------------------------------------------------------------------
// Asset format
//
//   schema_version = 1
//   multi_component = false        (optional; required true for disconnected graphs)
//   node <id> [label...]
//   edge <id> <id>
//   lex <word> <id>
//
// '#' starts a comment. Directives may appear in any order; edges and lexicon
// entries are resolved after all nodes are read.

inline constexpr int kGraphSchemaVersion = 1;

inline ConceptGraph parse_graph(std::istream& in, const std::string& source = "<graph>") {
  struct Pending {
    int line;
    std::string a, b;
  };
  ConceptGraph graph;
  std::vector<Pending> edges, words;
  std::optional<int> version;
  bool multi_component = false;
  std::string raw;
  int line_no = 0;
  auto error = [&](const std::string& msg) {
    fail(ErrorKind::config, source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    if (auto eq = line.find('='); eq != std::string::npos) {
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key == "schema_version") {
        try {
          version = std::stoi(value);
        } catch (const std::exception&) {
          error("schema_version must be an integer");
        }
      } else if (key == "multi_component") {
        if (value != "true" && value != "false") error("multi_component must be true or false");
        multi_component = value == "true";
      } else {
        error("unknown key '" + key + "'");
      }
      continue;
    }
    std::istringstream tokens(line);
    std::string directive, a, b;
    tokens >> directive >> a;
    if (a.empty()) error("directive '" + directive + "' needs arguments");
    if (directive == "node") {
      std::string label;
      std::getline(tokens, label);
      try {
        graph.add_node(a, trim(label));
      } catch (const Error& e) {
        error(e.what());
      }
    } else if (directive == "edge" || directive == "lex") {
      tokens >> b;
      if (b.empty()) error("directive '" + directive + "' needs two arguments");
      (directive == "edge" ? edges : words).push_back({line_no, a, b});
    } else {
      error("unknown directive '" + directive + "'");
    }
  }
  for (const auto& e : edges) {
    line_no = e.line;
    try {
      graph.add_edge(e.a, e.b);
    } catch (const Error& err) {
      error(err.what());
    }
  }
  for (const auto& w : words) {
    line_no = w.line;
    try {
      graph.add_word(w.a, w.b);
    } catch (const Error& err) {
      error(err.what());
    }
  }
  line_no = 0;
  if (!version) error("missing schema_version");
  if (*version != kGraphSchemaVersion) error("unsupported schema_version " + std::to_string(*version));
  if (!multi_component && !graph.connected())
    error("graph is disconnected; set multi_component = true if intended");
  return graph;
}

inline ConceptGraph parse_graph(const std::string& text) {
  std::istringstream in(text);
  return parse_graph(in);
}

inline ConceptGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open concept graph '" + path + "'");
  return parse_graph(in, path);
}

inline std::string write_graph(const ConceptGraph& graph) {
  std::ostringstream out;
  out << "schema_version = " << kGraphSchemaVersion << "\n";
  if (!graph.connected()) out << "multi_component = true\n";
  for (const auto& n : graph.nodes()) out << "node " << n.id << ' ' << n.label << "\n";
  for (const auto& [a, b] : graph.edges()) out << "edge " << a << ' ' << b << "\n";
  for (const auto& [w, c] : graph.lexicon()) out << "lex " << w << ' ' << c << "\n";
  return out.str();
}

/// Shipped default: fruit / animal / vehicle / furniture / scenery branches
/// under a single root.
inline constexpr std::string_view kDefaultGraphText = R"(# default concept graph
schema_version = 1

node object Object
node fruit Fruit
node animal Animal
node vehicle Vehicle
node furniture Furniture
node scenery Scenery

node apple Apple
node lemon Lemon
node orange Orange
node bird Bird
node cat Cat
node dog Dog
node car Car
node bus Bus
node table Table
node desk Desk
node chair Chair
node sky Sky
node grass Grass
node road Road

edge fruit object
edge animal object
edge vehicle object
edge furniture object
edge scenery object
edge apple fruit
edge lemon fruit
edge orange fruit
edge bird animal
edge cat animal
edge dog animal
edge car vehicle
edge bus vehicle
edge table furniture
edge desk furniture
edge chair furniture
edge sky scenery
edge grass scenery
edge road scenery

lex apple apple
lex apples apple
lex lemon lemon
lex lemons lemon
lex orange orange
lex oranges orange
lex bird bird
lex birds bird
lex cat cat
lex cats cat
lex kitten cat
lex dog dog
lex dogs dog
lex puppy dog
lex car car
lex cars car
lex bus bus
lex table table
lex tables table
lex desk desk
lex chair chair
lex sky sky
lex grass grass
lex road road
lex street road
lex fruit fruit
lex animal animal
lex vehicle vehicle
)";

inline ConceptGraph default_graph() {
  std::istringstream in{std::string(kDefaultGraphText)};
  return parse_graph(in, "<default graph>");
}

/// Returns a copy of `graph` extended with `node` and its edges.
inline ConceptGraph add_concept(const ConceptGraph& graph, const std::string& node,
                                const std::vector<std::string>& neighbours,
                                const std::vector<std::string>& words = {}) {
  if (graph.contains(node)) fail(ErrorKind::domain, "duplicate concept id '" + node + "'");
  for (const auto& n : neighbours)
    if (!graph.contains(n)) fail(ErrorKind::domain, "edge references missing concept '" + n + "'");
  ConceptGraph out = graph;
  out.add_node(node);
  for (const auto& n : neighbours) out.add_edge(node, n);
  out.add_word(node, node);
  for (const auto& w : words) out.add_word(w, node);
  return out;
}

// ---------------------------------------------------------------------------
// Prompts

struct PromptSpec {
  std::string text;
  std::vector<std::string> concepts;  // ordered by first mention, deduplicated
  std::string owner;
};

/// Case-insensitive whole-word lexicon match; unknown words are ignored.
inline PromptSpec parse_prompt(const std::string& text, const ConceptGraph& graph,
                               std::string owner = {}) {
  require(!trim(text).empty(), "prompt text is empty");
  PromptSpec spec{text, {}, std::move(owner)};
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    if (auto id = graph.lookup_word(word)) {
      if (std::find(spec.concepts.begin(), spec.concepts.end(), *id) == spec.concepts.end())
        spec.concepts.push_back(*id);
    }
    word.clear();
  };
  for (char c : text) {
    if (std::isalnum(static_cast<unsigned char>(c)) || c == '_')
      word.push_back(c);
    else
      flush();
  }
  flush();
  if (spec.concepts.empty())
    fail(ErrorKind::domain, "unschedulable prompt: no known concept in \"" + text + "\"");
  return spec;
}

/// Mean of best-match scores 1/(1+d) taken from both sides, so the measure is
/// symmetric; unreachable pairs score 0.
inline double similarity(const PromptSpec& a, const PromptSpec& b, const ConceptGraph& graph) {
  require(!a.concepts.empty() && !b.concepts.empty(), "similarity needs parsed prompts");
  auto score = [&](const std::string& x, const std::string& y) {
    const int d = graph.distance(x, y);
    return d == ConceptGraph::kUnreachable ? 0.0 : 1.0 / (1.0 + d);
  };
  auto best_sum = [&](const PromptSpec& from, const PromptSpec& to) {
    double sum = 0.0;
    for (const auto& x : from.concepts) {
      double best = 0.0;
      for (const auto& y : to.concepts) best = std::max(best, score(x, y));
      sum += best;
    }
    return sum;
  };
  const double total = best_sum(a, b) + best_sum(b, a);
  return total / static_cast<double>(a.concepts.size() + b.concepts.size());
}

// ---------------------------------------------------------------------------
// Grouping

enum class SharedPolicy { leader, union_all };

inline SharedPolicy parse_policy(const std::string& name) {
  if (name == "leader") return SharedPolicy::leader;
  if (name == "union") return SharedPolicy::union_all;
  fail(ErrorKind::config, "unknown shared-condition policy '" + name + "'");
}

/// Concept-level condition for a group's shared phase. `group` lists member
/// prompts with the leader first.
inline Condition shared_condition(const std::vector<PromptSpec>& group, SharedPolicy policy) {
  require(!group.empty(), "shared_condition needs a non-empty group");
  if (policy == SharedPolicy::leader) return Condition::uniform(group.front().concepts);
  std::vector<std::string> ids;
  for (const auto& p : group)
    for (const auto& c : p.concepts)
      if (std::find(ids.begin(), ids.end(), c) == ids.end()) ids.push_back(c);
  return Condition::uniform(std::move(ids));
}

struct UserGroup {
  std::vector<std::string> members;  // leader first
  std::string leader;
  Condition condition;
};

struct ClusterAssignment {
  std::vector<UserGroup> groups;

  const UserGroup* group_of(const std::string& user) const {
    for (const auto& g : groups)
      if (std::find(g.members.begin(), g.members.end(), user) != g.members.end()) return &g;
    return nullptr;
  }
};

/// Greedy leader clustering: the first unassigned prompt opens a group and
/// absorbs every later unassigned prompt within `threshold` of it.
inline ClusterAssignment cluster(const std::vector<PromptSpec>& prompts, double threshold,
                                 const ConceptGraph& graph,
                                 SharedPolicy policy = SharedPolicy::leader) {
  require(threshold >= 0.0, "cluster threshold must be non-negative");
  ClusterAssignment out;
  std::vector<bool> assigned(prompts.size(), false);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    if (assigned[i]) continue;
    assigned[i] = true;
    std::vector<PromptSpec> members{prompts[i]};
    for (std::size_t j = i + 1; j < prompts.size(); ++j) {
      if (assigned[j]) continue;
      if (similarity(prompts[i], prompts[j], graph) >= threshold) {
        assigned[j] = true;
        members.push_back(prompts[j]);
      }
    }
    UserGroup group;
    group.leader = prompts[i].owner;
    for (const auto& m : members) group.members.push_back(m.owner);
    group.condition = shared_condition(members, policy);
    out.groups.push_back(std::move(group));
  }
  return out;
}

/// Everyone in one group led by the first prompt, regardless of similarity.
inline ClusterAssignment force_single_group(const std::vector<PromptSpec>& prompts,
                                            SharedPolicy policy = SharedPolicy::leader) {
  require(!prompts.empty(), "cannot group zero prompts");
  UserGroup group;
  group.leader = prompts.front().owner;
  for (const auto& p : prompts) group.members.push_back(p.owner);
  group.condition = shared_condition(prompts, policy);
  return {{std::move(group)}};
}

}  // namespace cdiff
