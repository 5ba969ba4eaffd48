// vibspoof/protocol.hpp

// Copyright 2026  The vibspoof Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Protocol files, score files, manifests and low-resource subsampling.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "vibspoof/common.hpp"

namespace vibspoof {

enum class TrialKey { kBonafide, kSpoof, kUnknown };

enum class Corpus { kAsvspoof2015, kAsvspoof2019La, kAsvspoof2021La };

enum class Subset { kTrain, kDev, kEval };

// Attack id stored for bonafide trials, whatever the corpus writes on disk.
inline constexpr std::string_view kNoAttack = "-";

inline std::string_view KeyName(TrialKey k) {
  switch (k) {
    case TrialKey::kBonafide: return "bonafide";
    case TrialKey::kSpoof: return "spoof";
    default: return "unknown";
  }
}

inline std::string_view CorpusName(Corpus c) {
  switch (c) {
    case Corpus::kAsvspoof2015: return "asvspoof2015";
    case Corpus::kAsvspoof2019La: return "asvspoof2019_la";
    default: return "asvspoof2021_la";
  }
}

inline std::string_view SubsetName(Subset s) {
  switch (s) {
    case Subset::kTrain: return "train";
    case Subset::kDev: return "dev";
    default: return "eval";
  }
}

inline std::optional<Corpus> CorpusFromName(std::string_view name) {
  const std::string n = ToLower(name);
  if (n == "asvspoof2015" || n == "2015") return Corpus::kAsvspoof2015;
  if (n == "asvspoof2019_la" || n == "2019la" || n == "2019_la") return Corpus::kAsvspoof2019La;
  if (n == "asvspoof2021_la" || n == "2021la" || n == "2021_la") return Corpus::kAsvspoof2021La;
  return std::nullopt;
}

inline std::optional<Subset> SubsetFromName(std::string_view name) {
  const std::string n = ToLower(name);
  if (n == "train") return Subset::kTrain;
  if (n == "dev") return Subset::kDev;
  if (n == "eval") return Subset::kEval;
  return std::nullopt;
}

// Case-insensitive key token.  "genuine" and "human" are the 2015 spellings.
inline std::optional<TrialKey> ParseKeyToken(std::string_view tok) {
  const std::string t = ToLower(tok);
  if (t == "bonafide" || t == "genuine" || t == "human") return TrialKey::kBonafide;
  if (t == "spoof") return TrialKey::kSpoof;
  return std::nullopt;
}

struct ProtocolEntry {
  std::string speaker_id;
  std::string utterance_id;
  std::string attack_id;  // kNoAttack for bonafide trials
  TrialKey key = TrialKey::kBonafide;

  bool operator==(const ProtocolEntry&) const = default;
};

struct DatasetManifest {
  Corpus corpus = Corpus::kAsvspoof2019La;
  Subset subset = Subset::kTrain;
  std::vector<ProtocolEntry> entries;
  std::filesystem::path audio_root;
  // Ordered key/value annotations (e.g. subsampling provenance).
  std::vector<std::pair<std::string, std::string>> provenance;

  bool operator==(const DatasetManifest&) const = default;
};

struct ScoreRecord {
  std::string utterance_id;
  double score = 0.0;  // higher = more bonafide
  TrialKey key = TrialKey::kUnknown;

  bool operator==(const ScoreRecord&) const = default;
};

struct SubsampleSpec {
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

// Column positions of one on-disk protocol layout.
struct ColumnMap {
  std::size_t n_columns;
  std::size_t speaker;
  std::size_t utterance;
  std::size_t attack;
  std::size_t key;
};

// Accepted layouts per corpus; the first one is used when writing.
//   2019 LA / 2021 LA CM protocol: SPEAKER UTT - ATTACK KEY
//   2021 LA trial metadata:        SPEAKER UTT CODEC TX ATTACK KEY TRIM SUBSET
//   2015 CM protocol:              SPEAKER UTT ATTACK KEY   (bonafide = "human human")
inline std::vector<ColumnMap> CorpusLayouts(Corpus c) {
  switch (c) {
    case Corpus::kAsvspoof2015:
      return {{4, 0, 1, 2, 3}};
    case Corpus::kAsvspoof2019La:
      return {{5, 0, 1, 3, 4}};
    default:
      return {{5, 0, 1, 3, 4}, {8, 0, 1, 4, 5}};
  }
}

namespace internal {

inline bool IsNoAttackToken(Corpus c, std::string_view tok) {
  if (tok == kNoAttack) return true;
  return c == Corpus::kAsvspoof2015 && (ToLower(tok) == "human" || ToLower(tok) == "genuine");
}

inline void CheckEntryInvariants(const ProtocolEntry& e, std::size_t line_no) {
  const bool none = e.attack_id == kNoAttack;
  if (e.key == TrialKey::kBonafide && !none) {
    throw ValidationError("bonafide trial '" + e.utterance_id + "' carries attack id '" +
                          e.attack_id + "'" +
                          (line_no ? " (line " + std::to_string(line_no) + ")" : ""));
  }
  if (e.key == TrialKey::kSpoof && none) {
    throw ValidationError("spoof trial '" + e.utterance_id + "' has no attack id" +
                          (line_no ? std::string(" (line ") + std::to_string(line_no) + ")" : ""));
  }
}

}  // namespace internal

// Parses an ASVspoof protocol.  One entry per non-empty line, order kept.
inline DatasetManifest ParseProtocol(std::istream& in, Corpus corpus,
                                     Subset subset = Subset::kTrain,
                                     std::filesystem::path audio_root = {}) {
  DatasetManifest m;
  m.corpus = corpus;
  m.subset = subset;
  m.audio_root = std::move(audio_root);
  const auto layouts = CorpusLayouts(corpus);
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = SplitWhitespace(line);
    if (cols.empty()) continue;
    const ColumnMap* layout = nullptr;
    for (const auto& l : layouts) {
      if (l.n_columns == cols.size()) layout = &l;
    }
    if (layout == nullptr) {
      std::string expected;
      for (const auto& l : layouts) {
        expected += (expected.empty() ? "" : " or ") + std::to_string(l.n_columns);
      }
      throw ParseError("expected " + expected + " columns for " +
                           std::string(CorpusName(corpus)) + ", got " +
                           std::to_string(cols.size()),
                       line_no);
    }
    ProtocolEntry e;
    e.speaker_id = std::string(cols[layout->speaker]);
    e.utterance_id = std::string(cols[layout->utterance]);
    const auto key = ParseKeyToken(cols[layout->key]);
    if (!key) {
      throw ParseError("unknown key token '" + std::string(cols[layout->key]) + "'", line_no);
    }
    e.key = *key;
    const auto attack = cols[layout->attack];
    e.attack_id = internal::IsNoAttackToken(corpus, attack) ? std::string(kNoAttack)
                                                             : std::string(attack);
    internal::CheckEntryInvariants(e, line_no);
    auto [it, inserted] = seen.emplace(e.utterance_id, line_no);
    if (!inserted) {
      throw ValidationError("duplicate utterance id '" + e.utterance_id + "' on lines " +
                            std::to_string(it->second) + " and " + std::to_string(line_no));
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline DatasetManifest ParseProtocol(const std::string& text, Corpus corpus,
                                     Subset subset = Subset::kTrain,
                                     std::filesystem::path audio_root = {}) {
  std::istringstream in(text);
  return ParseProtocol(in, corpus, subset, std::move(audio_root));
}

// Writes entries in the corpus' primary on-disk layout.
inline std::string SerializeProtocol(const DatasetManifest& m) {
  std::string out;
  for (const auto& e : m.entries) {
    out += e.speaker_id;
    out += ' ';
    out += e.utterance_id;
    if (m.corpus == Corpus::kAsvspoof2015) {
      if (e.key == TrialKey::kBonafide) {
        out += " human human\n";
      } else {
        out += ' ' + e.attack_id + " spoof\n";
      }
    } else {
      out += " - ";
      out += e.attack_id;
      out += ' ';
      out += KeyName(e.key);
      out += '\n';
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Manifest cache: line-oriented, versioned, reads back to an identical object
// and writes back to identical bytes.

inline constexpr std::string_view kManifestMagic = "#vibspoof-manifest 1";

inline std::string WriteManifestCache(const DatasetManifest& m) {
  std::string out;
  out += kManifestMagic;
  out += '\n';
  out += "corpus " + std::string(CorpusName(m.corpus)) + '\n';
  out += "subset " + std::string(SubsetName(m.subset)) + '\n';
  out += "audio_root " + m.audio_root.string() + '\n';
  for (const auto& [k, v] : m.provenance) out += "provenance " + k + ' ' + v + '\n';
  out += "entries " + std::to_string(m.entries.size()) + '\n';
  for (const auto& e : m.entries) {
    out += e.speaker_id + ' ' + e.utterance_id + ' ' + e.attack_id + ' ' +
           std::string(KeyName(e.key)) + '\n';
  }
  return out;
}

inline DatasetManifest ReadManifestCache(std::istream& in) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line) || line != kManifestMagic) {
    throw ParseError("not a manifest cache (missing '" + std::string(kManifestMagic) + "')", 1);
  }
  DatasetManifest m;
  auto next = [&](std::string_view field) -> std::string {
    if (!std::getline(in, line)) {
      throw ParseError("truncated manifest, expected '" + std::string(field) + "'", line_no + 1);
    }
    ++line_no;
    if (line.rfind(std::string(field) + ' ', 0) != 0) {
      throw ParseError("expected '" + std::string(field) + "'", line_no);
    }
    return line.substr(field.size() + 1);
  };
  const auto corpus = CorpusFromName(next("corpus"));
  if (!corpus) throw ParseError("unknown corpus", line_no);
  m.corpus = *corpus;
  const auto subset = SubsetFromName(next("subset"));
  if (!subset) throw ParseError("unknown subset", line_no);
  m.subset = *subset;
  m.audio_root = next("audio_root");
  std::size_t count = 0;
  while (true) {
    if (!std::getline(in, line)) throw ParseError("truncated manifest header", line_no + 1);
    ++line_no;
    if (line.rfind("provenance ", 0) == 0) {
      const auto rest = line.substr(11);
      const auto sp = rest.find(' ');
      if (sp == std::string::npos) throw ParseError("malformed provenance line", line_no);
      m.provenance.emplace_back(rest.substr(0, sp), rest.substr(sp + 1));
      continue;
    }
    if (line.rfind("entries ", 0) == 0 && ParseInt(std::string_view(line).substr(8), &count)) {
      break;
    }
    throw ParseError("expected 'entries <count>'", line_no);
  }
  std::unordered_set<std::string> seen;
  m.entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(in, line)) throw ParseError("fewer entries than declared", line_no + 1);
    ++line_no;
    const auto cols = SplitWhitespace(line);
    if (cols.size() != 4) throw ParseError("expected 4 columns", line_no);
    ProtocolEntry e{std::string(cols[0]), std::string(cols[1]), std::string(cols[2]),
                    TrialKey::kBonafide};
    const auto key = ParseKeyToken(cols[3]);
    if (!key) throw ParseError("unknown key token '" + std::string(cols[3]) + "'", line_no);
    e.key = *key;
    internal::CheckEntryInvariants(e, line_no);
    if (!seen.insert(e.utterance_id).second) {
      throw ValidationError("duplicate utterance id '" + e.utterance_id + "'");
    }
    m.entries.push_back(std::move(e));
  }
  if (std::getline(in, line)) throw ParseError("trailing data after entries", line_no + 1);
  return m;
}

inline DatasetManifest ReadManifestCacheFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  try {
    return ReadManifestCache(in);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

inline std::string ManifestHash(const DatasetManifest& m) {
  Fnv1a64 h;
  h.Update(WriteManifestCache(m));
  return h.hex();
}

// ---------------------------------------------------------------------------
// Score files: "utterance_id score [key]".  The official 2019 CM layout
// "utterance_id attack key score" is accepted too.

inline std::vector<ScoreRecord> ParseScores(std::istream& in) {
  std::vector<ScoreRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = SplitWhitespace(line);
    if (cols.empty()) continue;
    std::string_view score_tok, key_tok;
    if (cols.size() == 2 || cols.size() == 3) {
      score_tok = cols[1];
      if (cols.size() == 3) key_tok = cols[2];
    } else if (cols.size() == 4) {
      key_tok = cols[2];
      score_tok = cols[3];
    } else {
      throw ParseError("expected 'utterance_id score [key]', got " + std::to_string(cols.size()) +
                           " columns",
                       line_no);
    }
    ScoreRecord r;
    r.utterance_id = std::string(cols[0]);
    if (!ParseDouble(score_tok, &r.score)) {
      throw ParseError("non-numeric score '" + std::string(score_tok) + "'", line_no);
    }
    if (!std::isfinite(r.score)) {
      throw ValidationError("line " + std::to_string(line_no) + ": non-finite score for '" +
                            r.utterance_id + "'");
    }
    if (!key_tok.empty() && ToLower(key_tok) != "unknown") {
      const auto key = ParseKeyToken(key_tok);
      if (!key) throw ParseError("unknown key token '" + std::string(key_tok) + "'", line_no);
      r.key = *key;
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<ScoreRecord> ParseScores(const std::string& text) {
  std::istringstream in(text);
  return ParseScores(in);
}

inline std::string WriteScores(const std::vector<ScoreRecord>& records, bool with_keys = false) {
  std::string out;
  for (const auto& r : records) {
    out += r.utterance_id + ' ' + FormatDouble(r.score);
    if (with_keys && r.key != TrialKey::kUnknown) out += ' ' + std::string(KeyName(r.key));
    out += '\n';
  }
  return out;
}

namespace internal {

inline std::string ListIds(const std::vector<std::string>& ids, std::size_t limit = 20) {
  std::string out;
  for (std::size_t i = 0; i < ids.size() && i < limit; ++i) out += (i ? ", " : "") + ids[i];
  if (ids.size() > limit) out += ", ... (" + std::to_string(ids.size() - limit) + " more)";
  return out;
}

}  // namespace internal

// Fills each record's key from the manifest.  Count and order are preserved.
inline std::vector<ScoreRecord> JoinScoresWithKeys(std::vector<ScoreRecord> scores,
                                                   const DatasetManifest& manifest) {
  std::unordered_map<std::string_view, TrialKey> keys;
  keys.reserve(manifest.entries.size());
  for (const auto& e : manifest.entries) keys.emplace(e.utterance_id, e.key);
  std::unordered_set<std::string_view> seen;
  std::vector<std::string> missing, duplicated;
  for (auto& r : scores) {
    if (!seen.insert(r.utterance_id).second) duplicated.push_back(r.utterance_id);
    const auto it = keys.find(r.utterance_id);
    if (it == keys.end()) {
      missing.push_back(r.utterance_id);
    } else {
      r.key = it->second;
    }
  }
  if (!duplicated.empty()) {
    throw ValidationError("duplicate score lines for: " + internal::ListIds(duplicated));
  }
  if (!missing.empty()) {
    throw ValidationError(std::to_string(missing.size()) +
                          " scored utterance(s) absent from manifest: " +
                          internal::ListIds(missing));
  }
  return scores;
}

// ---------------------------------------------------------------------------
// Low-resource subsampling.

// Number of utterances drawn from a stratum of size n: round-half-away of n*f
// with a floor of one.  The 1e-9 nudge keeps exact halves such as 50 * 0.03
// from rounding down because of binary representation error.
inline std::size_t StratumDrawCount(std::size_t n, double fraction) {
  if (n == 0) return 0;
  const double exact = static_cast<double>(n) * fraction;
  auto k = static_cast<std::size_t>(std::floor(exact + 0.5 + 1e-9));
  k = std::min(k, n);
  return std::max<std::size_t>(k, 1);
}

// Strata are (speaker_id, attack_id) cells, listed in first-appearance order.
inline std::vector<std::pair<std::pair<std::string, std::string>, std::vector<std::size_t>>>
StrataOf(const DatasetManifest& m) {
  std::vector<std::pair<std::pair<std::string, std::string>, std::vector<std::size_t>>> strata;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    auto cell = std::make_pair(m.entries[i].speaker_id, m.entries[i].attack_id);
    auto [it, inserted] = index.emplace(cell, strata.size());
    if (inserted) strata.push_back({std::move(cell), {}});
    strata[it->second].second.push_back(i);
  }
  return strata;
}

inline DatasetManifest StratifiedSubsample(const DatasetManifest& manifest,
                                           const SubsampleSpec& spec) {
  if (!(spec.fraction > 0.0 && spec.fraction <= 1.0)) {
    throw ArgumentError("subsample fraction must be in (0, 1], got " +
                        FormatDouble(spec.fraction));
  }
  if (manifest.entries.empty()) throw ArgumentError("cannot subsample an empty manifest");
  std::mt19937_64 rng(spec.seed);
  std::vector<char> keep(manifest.entries.size(), 0);
  for (auto& [cell, members] : StrataOf(manifest)) {
    const std::size_t k = StratumDrawCount(members.size(), spec.fraction);
    // Partial Fisher-Yates: the first k slots become a uniform k-subset.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, members.size() - 1);
      std::swap(members[i], members[pick(rng)]);
      keep[members[i]] = 1;
    }
  }
  DatasetManifest out = manifest;
  out.entries.clear();
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    if (keep[i]) out.entries.push_back(manifest.entries[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Audio lookup.  Utterance ids are opaque; these are the directory layouts
// the corpora ship with.

inline std::vector<std::filesystem::path> AudioCandidates(const DatasetManifest& m,
                                                          const ProtocolEntry& e) {
  const auto& root = m.audio_root;
  const auto& u = e.utterance_id;
  return {root / (u + ".flac"),         root / (u + ".wav"),
          root / "flac" / (u + ".flac"), root / "wav" / (u + ".wav"),
          root / e.speaker_id / (u + ".wav"), root / "wav" / e.speaker_id / (u + ".wav")};
}

// Returns the single audio file for an entry, nullopt if none exists, and
// throws if several candidates exist.
inline std::optional<std::filesystem::path> ResolveAudio(const DatasetManifest& m,
                                                         const ProtocolEntry& e) {
  std::optional<std::filesystem::path> found;
  for (const auto& p : AudioCandidates(m, e)) {
    std::error_code ec;
    if (std::filesystem::is_regular_file(p, ec)) {
      if (found) {
        throw ValidationError("utterance '" + e.utterance_id + "' is ambiguous: both " +
                              found->string() + " and " + p.string() + " exist");
      }
      found = p;
    }
  }
  return found;
}

inline std::vector<std::string> FindMissingAudio(const DatasetManifest& m) {
  std::vector<std::string> missing;
  for (const auto& e : m.entries) {
    if (!ResolveAudio(m, e)) missing.push_back(e.utterance_id);
  }
  return missing;
}

// Counts for the prepare summary: per key, and per attack id.
struct ManifestCounts {
  std::size_t bonafide = 0;
  std::size_t spoof = 0;
  std::map<std::string, std::size_t> per_attack;
};

inline ManifestCounts CountManifest(const DatasetManifest& m) {
  ManifestCounts c;
  for (const auto& e : m.entries) {
    (e.key == TrialKey::kBonafide ? c.bonafide : c.spoof)++;
    c.per_attack[e.attack_id]++;
  }
  return c;
}

}  // namespace vibspoof
