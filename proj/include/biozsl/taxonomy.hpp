#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "biozsl/errors.hpp"
#include "biozsl/io.hpp"
#include "biozsl/rng.hpp"

namespace biozsl {

// The seven taxonomic ranks, ordered from most specific to most general.
enum class Rank : int {
  Species = 0,
  Genus = 1,
  Family = 2,
  Order = 3,
  Class = 4,
  Phylum = 5,
  Kingdom = 6,
};

inline constexpr int kRankCount = 7;

inline constexpr std::array<const char*, kRankCount> kRankNames = {
    "species", "genus", "family", "order", "class", "phylum", "kingdom"};

inline const char* rank_name(Rank r) { return kRankNames[static_cast<int>(r)]; }

inline bool rank_at_most(Rank a, Rank b) { return static_cast<int>(a) <= static_cast<int>(b); }

// One organism class: a unique id plus its name at every rank.
struct Lineage {
  std::string taxon_id;
  std::array<std::string, kRankCount> names;  // indexed by Rank, species first

  const std::string& name_at(Rank r) const { return names[static_cast<std::size_t>(static_cast<int>(r))]; }

  bool operator==(const Lineage&) const = default;
};

// Immutable forest of lineages. Construction validates uniqueness of ids and
// the forest property: lineages sharing a name at rank r share names at every
// rank above r.
class Taxonomy {
 public:
  Taxonomy() = default;

  static Taxonomy from_lineages(std::vector<Lineage> lineages) {
    Taxonomy t;
    t.lineages_ = std::move(lineages);
    for (std::size_t i = 0; i < t.lineages_.size(); ++i) {
      const Lineage& l = t.lineages_[i];
      for (int r = 0; r < kRankCount; ++r) {
        if (l.names[static_cast<std::size_t>(r)].empty()) {
          throw ParseError("lineage '" + l.taxon_id + "': empty " + kRankNames[static_cast<std::size_t>(r)] + " name");
        }
      }
      if (!t.index_.emplace(l.taxon_id, i).second) {
        throw DuplicateIdError("duplicate taxon_id: " + l.taxon_id);
      }
    }
    t.check_forest();
    return t;
  }

  const Lineage* find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    return it == index_.end() ? nullptr : &lineages_[it->second];
  }

  const Lineage& require(std::string_view id) const {
    const Lineage* l = find(id);
    if (!l) throw LookupError("unknown taxon_id: " + std::string(id));
    return *l;
  }

  bool contains(std::string_view id) const { return find(id) != nullptr; }

  std::size_t size() const { return lineages_.size(); }
  bool empty() const { return lineages_.empty(); }
  const std::vector<Lineage>& lineages() const { return lineages_; }

  bool operator==(const Taxonomy& other) const { return lineages_ == other.lineages_; }

 private:
  void check_forest() const {
    // A name at rank r must determine the name at rank r+1; by induction this
    // gives the full forest property.
    for (int r = 0; r + 1 < kRankCount; ++r) {
      std::unordered_map<std::string_view, std::pair<std::string_view, const Lineage*>> parent;
      for (const Lineage& l : lineages_) {
        const std::string& name = l.names[static_cast<std::size_t>(r)];
        const std::string& up = l.names[static_cast<std::size_t>(r) + 1];
        auto [it, inserted] = parent.emplace(name, std::make_pair(std::string_view(up), &l));
        if (!inserted && it->second.first != up) {
          throw ConsistencyError("lineages '" + it->second.second->taxon_id + "' and '" + l.taxon_id +
                                 "' share " + kRankNames[static_cast<std::size_t>(r)] + " '" + name +
                                 "' but disagree at " + kRankNames[static_cast<std::size_t>(r) + 1]);
        }
      }
    }
  }

  std::vector<Lineage> lineages_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kTaxonomyHeader = "taxon_id\tspecies\tgenus\tfamily\torder\tclass\tphylum\tkingdom";

// Parses a tab-separated lineage table (header row required, row order kept).
inline Taxonomy load_taxonomy(std::string_view text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw ParseError("line 1: missing header row");
  if (lines[0] != kTaxonomyHeader) {
    throw ParseError("line 1: bad header, expected '" + std::string(kTaxonomyHeader) + "'");
  }
  std::vector<Lineage> lineages;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::vector<std::string> cols = split(lines[i], '\t');
    if (cols.size() != 1 + kRankCount) {
      throw ParseError("line " + std::to_string(i + 1) + ": expected " + std::to_string(1 + kRankCount) +
                       " columns, got " + std::to_string(cols.size()));
    }
    Lineage l;
    l.taxon_id = cols[0];
    if (l.taxon_id.empty()) throw ParseError("line " + std::to_string(i + 1) + ": empty taxon_id");
    for (int r = 0; r < kRankCount; ++r) {
      if (cols[static_cast<std::size_t>(r) + 1].empty()) {
        throw ParseError("line " + std::to_string(i + 1) + ": empty " + kRankNames[static_cast<std::size_t>(r)] +
                         " name");
      }
      l.names[static_cast<std::size_t>(r)] = cols[static_cast<std::size_t>(r) + 1];
    }
    lineages.push_back(std::move(l));
  }
  return Taxonomy::from_lineages(std::move(lineages));
}

inline Taxonomy load_taxonomy_file(const std::filesystem::path& path) {
  try {
    return load_taxonomy(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void save_taxonomy(const Taxonomy& t, std::ostream& out) {
  out << kTaxonomyHeader << '\n';
  for (const Lineage& l : t.lineages()) {
    out << l.taxon_id;
    for (int r = 0; r < kRankCount; ++r) out << '\t' << l.names[static_cast<std::size_t>(r)];
    out << '\n';
  }
}

inline std::string taxonomy_to_string(const Taxonomy& t) {
  std::ostringstream ss;
  save_taxonomy(t, ss);
  return ss.str();
}

// Rank of the lowest common ancestor of a and b; nullopt when the two
// lineages differ even at Kingdom. kinship_rank(a, a) == Species.
inline std::optional<Rank> kinship_rank(const Taxonomy& t, std::string_view a, std::string_view b) {
  const Lineage& la = t.require(a);
  const Lineage& lb = t.require(b);
  for (int r = 0; r < kRankCount; ++r) {
    if (la.names[static_cast<std::size_t>(r)] == lb.names[static_cast<std::size_t>(r)]) {
      return static_cast<Rank>(r);
    }
  }
  return std::nullopt;
}

enum class RelevanceLevel : int { Low = 0, Middle = 1, High = 2 };

inline const char* relevance_name(RelevanceLevel l) {
  switch (l) {
    case RelevanceLevel::Low: return "low";
    case RelevanceLevel::Middle: return "middle";
    case RelevanceLevel::High: return "high";
  }
  return "?";
}

// Correlation of a candidate class to the seen classes, per the closest
// kinship to any of them: High within the same class, Middle within the same
// kingdom but a different class, Low otherwise. Candidates absent from the
// taxonomy (non-biological classes) are Low.
inline RelevanceLevel relevance_of(const Taxonomy& t, const std::vector<std::string>& seen,
                                   std::string_view candidate) {
  for (const std::string& s : seen) {
    if (s == candidate) {
      throw PreconditionError("candidate '" + std::string(candidate) + "' is a seen class");
    }
  }
  for (const std::string& s : seen) t.require(s);
  if (!t.contains(candidate)) return RelevanceLevel::Low;

  std::optional<Rank> best;
  for (const std::string& s : seen) {
    const std::optional<Rank> r = kinship_rank(t, candidate, s);
    if (r && (!best || static_cast<int>(*r) < static_cast<int>(*best))) best = r;
  }
  if (!best) return RelevanceLevel::Low;
  return rank_at_most(*best, Rank::Class) ? RelevanceLevel::High : RelevanceLevel::Middle;
}

struct PoolEntry {
  std::string taxon_id;
  std::size_t sample_count = 0;
};

struct AuxiliarySelection {
  std::vector<std::string> classes;
  std::size_t per_class_quota = 0;
};

// Draws n_classes distinct pool candidates matching the requested relevance
// level, each able to supply n_per_class samples. Uniform without
// replacement, deterministic for a given seed.
inline AuxiliarySelection select_auxiliary(const Taxonomy& t, const std::vector<std::string>& seen,
                                           const std::vector<PoolEntry>& pool, RelevanceLevel level,
                                           std::size_t n_classes, std::size_t n_per_class, std::uint64_t seed) {
  std::unordered_set<std::string_view> seen_set(seen.begin(), seen.end());
  std::vector<const PoolEntry*> qualifying;
  for (const PoolEntry& e : pool) {
    if (seen_set.count(e.taxon_id)) {
      throw PreconditionError("pool candidate '" + e.taxon_id + "' is a seen class");
    }
    if (e.sample_count < n_per_class) continue;
    if (relevance_of(t, seen, e.taxon_id) == level) qualifying.push_back(&e);
  }
  if (qualifying.size() < n_classes) {
    throw SelectionError("need " + std::to_string(n_classes) + " " + relevance_name(level) +
                         "-relevant classes with >= " + std::to_string(n_per_class) + " samples, only " +
                         std::to_string(qualifying.size()) + " of " + std::to_string(pool.size()) + " qualify");
  }
  AuxiliarySelection sel;
  sel.per_class_quota = n_per_class;
  Rng rng(seed);
  for (std::size_t i : rng.sample_without_replacement(qualifying.size(), n_classes)) {
    sel.classes.push_back(qualifying[i]->taxon_id);
  }
  return sel;
}

inline void save_selection(const AuxiliarySelection& sel, std::ostream& out) {
  for (const std::string& id : sel.classes) out << id << '\t' << sel.per_class_quota << '\n';
}

}  // namespace biozsl
