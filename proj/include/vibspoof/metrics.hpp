// vibspoof/metrics.hpp

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

// Score-level metrics for countermeasure scores (higher = more bonafide).
//
// A threshold t accepts an utterance when score >= t, so
//   p_miss(t) = #{bonafide : score <  t} / #bonafide
//   p_fa(t)   = #{spoof    : score >= t} / #spoof
// evaluated at -inf, every distinct score, and +inf.

#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "vibspoof/common.hpp"
#include "vibspoof/protocol.hpp"

namespace vibspoof {

struct OperatingPoint {
  double threshold;
  double p_miss;
  double p_fa;
};

struct ClassScores {
  std::vector<double> bonafide;
  std::vector<double> spoof;
};

inline ClassScores SplitByKey(const std::vector<ScoreRecord>& records) {
  ClassScores out;
  std::vector<std::string> unknown;
  for (const auto& r : records) {
    if (!std::isfinite(r.score)) {
      throw ValidationError("non-finite score for '" + r.utterance_id + "'");
    }
    if (r.key == TrialKey::kBonafide) {
      out.bonafide.push_back(r.score);
    } else if (r.key == TrialKey::kSpoof) {
      out.spoof.push_back(r.score);
    } else {
      unknown.push_back(r.utterance_id);
    }
  }
  if (!unknown.empty()) {
    throw ValidationError("scores without a key: " + internal::ListIds(unknown));
  }
  return out;
}

inline void RequireBothClasses(const ClassScores& s) {
  if (s.bonafide.empty() || s.spoof.empty()) {
    throw ValidationError("metrics need both bonafide and spoof trials (got " +
                          std::to_string(s.bonafide.size()) + " bonafide, " +
                          std::to_string(s.spoof.size()) + " spoof)");
  }
}

inline std::vector<OperatingPoint> DetSweep(const ClassScores& s) {
  RequireBothClasses(s);
  std::vector<double> bona = s.bonafide, spoof = s.spoof;
  std::sort(bona.begin(), bona.end());
  std::sort(spoof.begin(), spoof.end());
  std::vector<double> thresholds;
  thresholds.reserve(bona.size() + spoof.size() + 2);
  std::merge(bona.begin(), bona.end(), spoof.begin(), spoof.end(), std::back_inserter(thresholds));
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  thresholds.insert(thresholds.begin(), -std::numeric_limits<double>::infinity());
  thresholds.push_back(std::numeric_limits<double>::infinity());

  const double nb = static_cast<double>(bona.size()), ns = static_cast<double>(spoof.size());
  std::vector<OperatingPoint> out;
  out.reserve(thresholds.size());
  std::size_t below_b = 0, below_s = 0;  // counts with score < t
  for (double t : thresholds) {
    while (below_b < bona.size() && bona[below_b] < t) ++below_b;
    while (below_s < spoof.size() && spoof[below_s] < t) ++below_s;
    out.push_back({t, static_cast<double>(below_b) / nb,
                   static_cast<double>(spoof.size() - below_s) / ns});
  }
  return out;
}

inline std::vector<OperatingPoint> DetSweep(const std::vector<ScoreRecord>& records) {
  return DetSweep(SplitByKey(records));
}

enum class EerMode {
  kMidpoint,     // mean of the two rates where |p_miss - p_fa| is smallest
  kInterpolate,  // linear interpolation between the points bracketing the crossing
};

struct EerResult {
  double eer;        // percent
  double threshold;
};

inline EerResult ComputeEer(const ClassScores& s, EerMode mode = EerMode::kMidpoint) {
  const auto pts = DetSweep(s);
  if (mode == EerMode::kMidpoint) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (std::abs(pts[i].p_miss - pts[i].p_fa) < std::abs(pts[best].p_miss - pts[best].p_fa)) {
        best = i;
      }
    }
    return {50.0 * (pts[best].p_miss + pts[best].p_fa), pts[best].threshold};
  }
  // d = p_fa - p_miss falls from 1 at -inf to -1 at +inf.
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double d0 = pts[i].p_fa - pts[i].p_miss;
    const double d1 = pts[i + 1].p_fa - pts[i + 1].p_miss;
    if (d0 == 0) return {100.0 * pts[i].p_miss, pts[i].threshold};
    if (d1 <= 0) {
      const double a = d0 / (d0 - d1);
      const double pm = pts[i].p_miss + a * (pts[i + 1].p_miss - pts[i].p_miss);
      const double t0 = pts[i].threshold, t1 = pts[i + 1].threshold;
      const double t = std::isfinite(t0) && std::isfinite(t1) ? t0 + a * (t1 - t0)
                                                              : (std::isfinite(t1) ? t1 : t0);
      return {100.0 * pm, t};
    }
  }
  return {100.0 * pts.back().p_miss, pts.back().threshold};  // unreachable
}

inline EerResult ComputeEer(const std::vector<ScoreRecord>& records,
                            EerMode mode = EerMode::kMidpoint) {
  return ComputeEer(SplitByKey(records), mode);
}

// ---------------------------------------------------------------------------
// Tandem detection cost.

struct AsvOperatingPoint {
  double p_fa = 0.0;          // nontarget accepted
  double p_miss = 0.0;        // target rejected
  double p_miss_spoof = 0.0;  // spoof rejected by the ASV
};

struct TDCFCostModel {
  double p_spoof = 0.05;
  double p_tar = (1 - 0.05) * 0.99;
  double p_non = (1 - 0.05) * 0.01;
  double c_miss_asv = 1;
  double c_fa_asv = 10;
  double c_miss_cm = 1;
  double c_fa_cm = 10;
  AsvOperatingPoint asv;

  std::vector<std::string> Problems() const {
    std::vector<std::string> p;
    for (double v : {p_tar, p_non, p_spoof}) {
      if (!(v >= 0 && v <= 1)) {
        p.push_back("priors must lie in [0, 1]");
        break;
      }
    }
    if (std::abs(p_tar + p_non + p_spoof - 1) > 1e-10) p.push_back("priors must sum to 1");
    for (double v : {c_miss_asv, c_fa_asv, c_miss_cm, c_fa_cm}) {
      if (!(v > 0) || !std::isfinite(v)) {
        p.push_back("costs must be positive");
        break;
      }
    }
    for (double v : {asv.p_fa, asv.p_miss, asv.p_miss_spoof}) {
      if (!(v >= 0 && v <= 1)) {
        p.push_back("ASV error rates must lie in [0, 1]");
        break;
      }
    }
    return p;
  }

  double C1() const {
    return p_tar * (c_miss_cm - c_miss_asv * asv.p_miss) - p_non * c_fa_asv * asv.p_fa;
  }
  // A spoof trial only costs the tandem system if the ASV accepts it.
  double C2() const { return c_fa_cm * p_spoof * (1 - asv.p_miss_spoof); }
};

struct TdcfResult {
  double min_tdcf;
  double threshold;
};

inline TdcfResult MinTdcf(const ClassScores& s, const TDCFCostModel& cost) {
  auto problems = cost.Problems();
  const double c1 = cost.C1(), c2 = cost.C2();
  if (problems.empty() && !(c1 > 0)) {
    problems.push_back("degenerate tandem system: C1 = " + FormatDouble(c1) + " <= 0");
  }
  if (problems.empty() && !(c2 > 0)) {
    problems.push_back("degenerate tandem system: C2 = " + FormatDouble(c2) +
                       " <= 0 (the ASV rejects every spoof trial)");
  }
  if (!problems.empty()) throw ConfigError(problems);
  const double norm = std::min(c1, c2);
  TdcfResult best{std::numeric_limits<double>::infinity(), 0.0};
  for (const auto& p : DetSweep(s)) {
    const double v = (c1 * p.p_miss + c2 * p.p_fa) / norm;
    if (v < best.min_tdcf) best = {v, p.threshold};
  }
  return best;
}

inline TdcfResult MinTdcf(const std::vector<ScoreRecord>& records, const TDCFCostModel& cost) {
  return MinTdcf(SplitByKey(records), cost);
}

// ---------------------------------------------------------------------------
// ASV operating point from an organiser ASV score file: lines
// "speaker key score" with key target / nontarget / spoof.

struct AsvScores {
  std::vector<double> target, nontarget, spoof;
};

inline AsvScores ParseAsvScores(std::istream& in) {
  AsvScores out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto cols = SplitWhitespace(line);
    if (cols.empty()) continue;
    if (cols.size() != 3) {
      throw ParseError("expected 'source key score' in ASV score file", line_no);
    }
    double v;
    if (!ParseDouble(cols[2], &v) || !std::isfinite(v)) {
      throw ParseError("bad ASV score '" + std::string(cols[2]) + "'", line_no);
    }
    const std::string key = ToLower(cols[1]);
    if (key == "target") {
      out.target.push_back(v);
    } else if (key == "nontarget") {
      out.nontarget.push_back(v);
    } else if (key == "spoof") {
      out.spoof.push_back(v);
    } else {
      throw ParseError("unknown ASV key '" + std::string(cols[1]) + "'", line_no);
    }
  }
  if (out.target.empty() || out.nontarget.empty()) {
    throw ValidationError("ASV score file needs target and nontarget trials");
  }
  if (out.spoof.empty()) throw ValidationError("ASV score file has no spoof trials");
  return out;
}

// Equal-error threshold of the ASV scores following the organisers'
// convention: trials sorted by score (stable, targets first), rejecting the
// k lowest for k = 0..n, with threshold min - 0.001 for k = 0.
inline double AsvEerThreshold(const AsvScores& s) {
  std::vector<std::pair<double, int>> all;  // score, is_target
  for (double v : s.target) all.push_back({v, 1});
  for (double v : s.nontarget) all.push_back({v, 0});
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  const double nt = static_cast<double>(s.target.size());
  const double nn = static_cast<double>(s.nontarget.size());
  double best_diff = std::abs(0.0 - 1.0);
  double best_thr = all.front().first - 0.001;
  double tar_below = 0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    tar_below += all[k].second;
    const double non_below = static_cast<double>(k + 1) - tar_below;
    const double frr = tar_below / nt;
    const double far = (nn - non_below) / nn;
    if (std::abs(frr - far) < best_diff) {
      best_diff = std::abs(frr - far);
      best_thr = all[k].first;
    }
  }
  return best_thr;
}

inline AsvOperatingPoint AsvRatesAt(const AsvScores& s, double threshold) {
  auto frac = [](const std::vector<double>& v, auto pred) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), pred)) /
           static_cast<double>(v.size());
  };
  AsvOperatingPoint p;
  p.p_fa = frac(s.nontarget, [&](double v) { return v >= threshold; });
  p.p_miss = frac(s.target, [&](double v) { return v < threshold; });
  p.p_miss_spoof = frac(s.spoof, [&](double v) { return v < threshold; });
  return p;
}

// ---------------------------------------------------------------------------

struct EvalSummary {
  double eer = 0.0;
  double eer_threshold = 0.0;
  std::optional<double> min_tdcf;
  std::optional<double> min_tdcf_threshold;
  std::size_t n_bonafide = 0;
  std::size_t n_spoof = 0;
};

inline EvalSummary Evaluate(const std::vector<ScoreRecord>& records,
                            const std::optional<TDCFCostModel>& cost,
                            EerMode mode = EerMode::kMidpoint) {
  const ClassScores s = SplitByKey(records);
  RequireBothClasses(s);
  EvalSummary out;
  const auto e = ComputeEer(s, mode);
  out.eer = e.eer;
  out.eer_threshold = e.threshold;
  out.n_bonafide = s.bonafide.size();
  out.n_spoof = s.spoof.size();
  if (cost) {
    const auto t = MinTdcf(s, *cost);
    out.min_tdcf = t.min_tdcf;
    out.min_tdcf_threshold = t.threshold;
  }
  return out;
}

// "key value" lines with stable names.
inline std::string FormatEvalReport(const EvalSummary& s, const std::optional<TDCFCostModel>& cost) {
  std::string out;
  auto kv = [&](const std::string& k, const std::string& v) { out += k + ' ' + v + '\n'; };
  kv("n_bonafide", std::to_string(s.n_bonafide));
  kv("n_spoof", std::to_string(s.n_spoof));
  kv("eer_percent", FormatFixed(s.eer, 4));
  kv("eer_threshold", FormatDouble(s.eer_threshold));
  if (s.min_tdcf && cost) {
    kv("min_tdcf", FormatFixed(*s.min_tdcf, 6));
    kv("min_tdcf_threshold", FormatDouble(*s.min_tdcf_threshold));
    kv("cost_p_tar", FormatDouble(cost->p_tar));
    kv("cost_p_non", FormatDouble(cost->p_non));
    kv("cost_p_spoof", FormatDouble(cost->p_spoof));
    kv("cost_c_miss_asv", FormatDouble(cost->c_miss_asv));
    kv("cost_c_fa_asv", FormatDouble(cost->c_fa_asv));
    kv("cost_c_miss_cm", FormatDouble(cost->c_miss_cm));
    kv("cost_c_fa_cm", FormatDouble(cost->c_fa_cm));
    kv("asv_p_fa", FormatDouble(cost->asv.p_fa));
    kv("asv_p_miss", FormatDouble(cost->asv.p_miss));
    kv("asv_p_miss_spoof", FormatDouble(cost->asv.p_miss_spoof));
  } else {
    kv("min_tdcf", "skipped");
    out += "# t-DCF skipped: no ASV operating point was supplied "
           "(use --asv-rates or --asv-scores)\n";
  }
  return out;
}

}  // namespace vibspoof
