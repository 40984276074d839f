#pragma once

// Exact-match F1 over pre-extracted entity/relation graphs.

#include <istream>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "radeval/error.hpp"

namespace radeval::metrics {

struct GraphEntity {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;
  auto operator<=>(const GraphEntity&) const = default;
};

struct GraphRelation {
  std::size_t src = 0;  // index into entities
  std::size_t dst = 0;
  std::string label;
};

struct AnnotationGraph {
  std::vector<GraphEntity> entities;
  std::vector<GraphRelation> relations;

  void validate() const {
    for (const auto& r : relations) {
      if (r.src >= entities.size() || r.dst >= entities.size()) {
        throw Error(ErrorCode::kValidation, "relation endpoint does not name an entity", "relations");
      }
    }
  }
};

struct GraphF1 {
  double entity_f1 = 0.0;
  double relation_f1 = 0.0;
};

namespace detail {

template <typename T>
double set_f1(const std::set<T>& a, const std::set<T>& b) {
  if (a.empty() && b.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& x : a) common += b.count(x);
  return 2.0 * static_cast<double>(common) / static_cast<double>(a.size() + b.size());
}

using RelationKey = std::tuple<GraphEntity, GraphEntity, std::string>;

inline std::set<RelationKey> relation_keys(const AnnotationGraph& g) {
  std::set<RelationKey> out;
  for (const auto& r : g.relations) out.emplace(g.entities[r.src], g.entities[r.dst], r.label);
  return out;
}

}  // namespace detail

// F1 = 2|P & R| / (|P| + |R|) for entities and for relation triples, with
// relation endpoints compared by value. Two empty sets score 1.
inline GraphF1 graph_f1(const AnnotationGraph& predicted, const AnnotationGraph& reference) {
  predicted.validate();
  reference.validate();
  const std::set<GraphEntity> pe(predicted.entities.begin(), predicted.entities.end());
  const std::set<GraphEntity> re(reference.entities.begin(), reference.entities.end());
  return {detail::set_f1(pe, re),
          detail::set_f1(detail::relation_keys(predicted), detail::relation_keys(reference))};
}

inline AnnotationGraph graph_from_json(const nlohmann::json& j) {
  AnnotationGraph g;
  for (const auto& e : j.value("entities", nlohmann::json::array())) {
    g.entities.push_back({e.at("start").get<std::size_t>(), e.at("end").get<std::size_t>(),
                          e.at("label").get<std::string>()});
  }
  for (const auto& r : j.value("relations", nlohmann::json::array())) {
    g.relations.push_back({r.at("src").get<std::size_t>(), r.at("dst").get<std::size_t>(),
                           r.at("label").get<std::string>()});
  }
  g.validate();
  return g;
}

// JSONL of {report_id, entities:[{start,end,label}], relations:[{src,dst,label}]}.
inline std::map<std::string, AnnotationGraph> read_graphs_jsonl(std::istream& in) {
  std::map<std::string, AnnotationGraph> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out[j.at("report_id").get<std::string>()] = graph_from_json(j);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::kSchema, "graph line " + std::to_string(line_no) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(e.code(), "graph line " + std::to_string(line_no) + ": " + e.what(), e.field());
    }
  }
  return out;
}

}  // namespace radeval::metrics
