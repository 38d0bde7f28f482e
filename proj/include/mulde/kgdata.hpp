#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mulde/error.hpp"
#include "mulde/table.hpp"

namespace mulde {

struct Triple {
  EntityId head = 0;
  RelationId rel = 0;
  EntityId tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Bijective name <-> id maps. Ids are dense and assigned in lexicographic
// order of the names, so the assignment does not depend on file order.
class Vocab {
 public:
  Vocab() = default;

  static Vocab from_names(std::vector<std::string> entities, std::vector<std::string> relations) {
    Vocab v;
    std::sort(entities.begin(), entities.end());
    entities.erase(std::unique(entities.begin(), entities.end()), entities.end());
    std::sort(relations.begin(), relations.end());
    relations.erase(std::unique(relations.begin(), relations.end()), relations.end());
    v.entities_ = std::move(entities);
    v.relations_ = std::move(relations);
    v.n_base_relations_ = v.relations_.size();
    v.reindex();
    return v;
  }

  std::size_t num_entities() const noexcept { return entities_.size(); }
  std::size_t num_relations() const noexcept { return relations_.size(); }
  // Relation count before reciprocal augmentation.
  std::size_t num_base_relations() const noexcept { return n_base_relations_; }
  bool augmented() const noexcept { return augmented_; }

  std::optional<EntityId> entity_id(std::string_view name) const {
    auto it = entity_ids_.find(std::string(name));
    if (it == entity_ids_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<RelationId> relation_id(std::string_view name) const {
    auto it = relation_ids_.find(std::string(name));
    if (it == relation_ids_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& entity_name(EntityId id) const { return entities_.at(id); }
  const std::string& relation_name(RelationId id) const { return relations_.at(id); }
  const std::vector<std::string>& entity_names() const noexcept { return entities_; }
  const std::vector<std::string>& relation_names() const noexcept { return relations_; }

  // Appends "<name>_reverse" for every base relation; reverse id = id + N_r.
  Vocab with_reciprocals() const {
    if (augmented_) throw DataError("vocabulary is already augmented with reciprocal relations");
    Vocab v = *this;
    for (std::size_t r = 0; r < n_base_relations_; ++r) v.relations_.push_back(relations_[r] + "_reverse");
    v.augmented_ = true;
    v.reindex();
    return v;
  }

  // FNV-1a over the ordered name lists; used to refuse mixing models across vocabularies.
  std::uint64_t hash() const noexcept {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](std::string_view s) {
      for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
      }
      h ^= 0xff;
      h *= 1099511628211ULL;
    };
    for (const auto& e : entities_) feed(e);
    feed("\x01relations");
    for (std::size_t r = 0; r < n_base_relations_; ++r) feed(relations_[r]);
    return h;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.entities_ == b.entities_ && a.relations_ == b.relations_ &&
           a.n_base_relations_ == b.n_base_relations_ && a.augmented_ == b.augmented_;
  }

 private:
  void reindex() {
    entity_ids_.clear();
    relation_ids_.clear();
    for (std::size_t i = 0; i < entities_.size(); ++i) entity_ids_.emplace(entities_[i], EntityId(i));
    for (std::size_t i = 0; i < relations_.size(); ++i) relation_ids_.emplace(relations_[i], RelationId(i));
  }

  std::vector<std::string> entities_;
  std::vector<std::string> relations_;
  std::unordered_map<std::string, EntityId> entity_ids_;
  std::unordered_map<std::string, RelationId> relation_ids_;
  std::size_t n_base_relations_ = 0;
  bool augmented_ = false;
};

struct Dataset {
  std::vector<Triple> train;
  std::vector<Triple> valid;
  std::vector<Triple> test;
  Vocab vocab;
};

namespace detail {

struct NamedTriple {
  std::string head, rel, tail;
};

inline std::vector<NamedTriple> read_named_triples(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open triple file: " + path.string());
  std::vector<NamedTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) {
      throw ParseError(path.string(), line_no,
                       "expected 3 tab-separated fields, found " + std::to_string(fields.size()));
    }
    out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

inline std::vector<Triple> index_triples(const std::vector<NamedTriple>& named, const Vocab& vocab,
                                         const std::string& source) {
  std::vector<Triple> out;
  out.reserve(named.size());
  for (const auto& t : named) {
    auto h = vocab.entity_id(t.head);
    auto r = vocab.relation_id(t.rel);
    auto e = vocab.entity_id(t.tail);
    if (!h) throw VocabError(source + ": unknown entity '" + t.head + "'");
    if (!r) throw VocabError(source + ": unknown relation '" + t.rel + "'");
    if (!e) throw VocabError(source + ": unknown entity '" + t.tail + "'");
    out.push_back({*h, *r, *e});
  }
  // Duplicates carry no ranking information; keep the first occurrence only.
  std::set<Triple> seen;
  std::erase_if(out, [&seen](const Triple& t) { return !seen.insert(t).second; });
  return out;
}

inline Vocab vocab_from(const std::vector<NamedTriple>& named) {
  std::vector<std::string> ents, rels;
  for (const auto& t : named) {
    ents.push_back(t.head);
    ents.push_back(t.tail);
    rels.push_back(t.rel);
  }
  return Vocab::from_names(std::move(ents), std::move(rels));
}

}  // namespace detail

// Reads `head<TAB>relation<TAB>tail` lines. With a vocabulary, unseen names are
// an error; without one, the vocabulary is built from this file alone.
inline std::pair<std::vector<Triple>, Vocab> load_triples(const std::filesystem::path& path,
                                                          const Vocab* vocab = nullptr) {
  auto named = detail::read_named_triples(path);
  Vocab v = vocab ? *vocab : detail::vocab_from(named);
  auto triples = detail::index_triples(named, v, path.string());
  return {std::move(triples), std::move(v)};
}

// Loads train.txt / valid.txt / test.txt from a directory. The vocabulary is
// the union of names over all three splits.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto train_path = dir / "train.txt";
  const auto valid_path = dir / "valid.txt";
  const auto test_path = dir / "test.txt";
  for (const auto& p : {train_path, valid_path, test_path}) {
    if (!std::filesystem::exists(p)) throw ConfigError("missing dataset file: " + p.string());
  }
  auto train = detail::read_named_triples(train_path);
  auto valid = detail::read_named_triples(valid_path);
  auto test = detail::read_named_triples(test_path);
  std::vector<detail::NamedTriple> all = train;
  all.insert(all.end(), valid.begin(), valid.end());
  all.insert(all.end(), test.begin(), test.end());
  Dataset d;
  d.vocab = detail::vocab_from(all);
  d.train = detail::index_triples(train, d.vocab, train_path.string());
  d.valid = detail::index_triples(valid, d.vocab, valid_path.string());
  d.test = detail::index_triples(test, d.vocab, test_path.string());

  std::set<Triple> train_set(d.train.begin(), d.train.end());
  std::set<Triple> valid_set(d.valid.begin(), d.valid.end());
  for (const auto& t : d.valid) {
    if (train_set.count(t)) throw DataError("triple appears in both train and valid splits");
  }
  for (const auto& t : d.test) {
    if (train_set.count(t) || valid_set.count(t)) throw DataError("test triple also appears in another split");
  }
  return d;
}

// For each (h, r, t) adds (t, r + N_r, h) to the same split; N_r doubles.
inline Dataset add_reciprocals(const Dataset& d) {
  if (d.vocab.augmented()) throw DataError("dataset already augmented with reciprocal relations");
  const auto n_r = static_cast<RelationId>(d.vocab.num_relations());
  auto augment = [n_r](const std::vector<Triple>& split) {
    std::vector<Triple> out;
    out.reserve(split.size() * 2);
    out.insert(out.end(), split.begin(), split.end());
    for (const auto& t : split) out.push_back({t.tail, t.rel + n_r, t.head});
    return out;
  };
  Dataset out;
  out.train = augment(d.train);
  out.valid = augment(d.valid);
  out.test = augment(d.test);
  out.vocab = d.vocab.with_reciprocals();
  return out;
}

enum class FilterScope { kTrainOnly, kFull };

inline std::string to_string(FilterScope s) { return s == FilterScope::kFull ? "full" : "train-only"; }

inline FilterScope parse_filter_scope(std::string_view s) {
  if (s == "full") return FilterScope::kFull;
  if (s == "train-only" || s == "train") return FilterScope::kTrainOnly;
  throw ConfigError("unknown filter scope '" + std::string(s) + "' (expected full or train-only)");
}

// (head, rel) -> sorted known-true tails.
class FilterIndex {
 public:
  FilterIndex() = default;
  explicit FilterIndex(FilterScope scope) : scope_(scope) {}

  void add(const Triple& t) { known_[key(t.head, t.rel)].push_back(t.tail); }

  void finalize() {
    for (auto& [k, tails] : known_) {
      std::sort(tails.begin(), tails.end());
      tails.erase(std::unique(tails.begin(), tails.end()), tails.end());
    }
  }

  std::span<const EntityId> tails(EntityId head, RelationId rel) const {
    auto it = known_.find(key(head, rel));
    if (it == known_.end()) return {};
    return it->second;
  }

  bool contains(const Triple& t) const {
    auto ts = tails(t.head, t.rel);
    return std::binary_search(ts.begin(), ts.end(), t.tail);
  }

  // Number of distinct (head, rel) keys.
  std::size_t size() const noexcept { return known_.size(); }
  FilterScope scope() const noexcept { return scope_; }

 private:
  static std::uint64_t key(EntityId h, RelationId r) noexcept {
    return (static_cast<std::uint64_t>(h) << 32) | r;
  }

  FilterScope scope_ = FilterScope::kFull;
  std::unordered_map<std::uint64_t, std::vector<EntityId>> known_;
};

inline FilterIndex build_filter(const Dataset& d, FilterScope scope) {
  FilterIndex f(scope);
  for (const auto& t : d.train) f.add(t);
  if (scope == FilterScope::kFull) {
    for (const auto& t : d.valid) f.add(t);
    for (const auto& t : d.test) f.add(t);
  }
  f.finalize();
  return f;
}

inline void write_vocab_tsv(std::ostream& out, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << '\t' << i << '\n';
}

// Writes entities.tsv and relations.tsv (`name<TAB>id`) into `dir`.
inline void dump_vocab(const Vocab& vocab, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream ents(dir / "entities.tsv");
  write_vocab_tsv(ents, vocab.entity_names());
  std::ofstream rels(dir / "relations.tsv");
  write_vocab_tsv(rels, vocab.relation_names());
  if (!ents || !rels) throw DataError("failed writing vocabulary to " + dir.string());
}

inline void write_triples(const std::filesystem::path& path, std::span<const Triple> triples,
                          const Vocab& vocab) {
  std::ofstream out(path);
  for (const auto& t : triples) {
    out << vocab.entity_name(t.head) << '\t' << vocab.relation_name(t.rel) << '\t'
        << vocab.entity_name(t.tail) << '\n';
  }
  if (!out) throw DataError("failed writing triples to " + path.string());
}

}  // namespace mulde
