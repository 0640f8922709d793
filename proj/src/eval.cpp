#include "contamscope/eval.hpp"

#include "contamscope/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>

namespace contamscope {

namespace {

// Twice the Mann-Whitney U, as an integer: 2 per win, 1 per tie.
double finish(std::uint64_t twice_u, std::size_t n1, std::size_t n0) {
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n1) * static_cast<double>(n0));
}

void require_both(std::size_t n1, std::size_t n0) {
  if (n1 == 0 || n0 == 0) throw Error("degenerate labels");
}

}  // namespace

double auc_pairs(const std::vector<double>& contaminated, const std::vector<double>& clean) {
  require_both(contaminated.size(), clean.size());
  std::uint64_t twice_u = 0;
  for (double c : contaminated) {
    for (double u : clean) twice_u += c > u ? 2 : (c == u ? 1 : 0);
  }
  return finish(twice_u, contaminated.size(), clean.size());
}

double auc_rank(const std::vector<double>& contaminated, const std::vector<double>& clean) {
  require_both(contaminated.size(), clean.size());
  std::vector<std::pair<double, bool>> all;
  all.reserve(contaminated.size() + clean.size());
  for (double c : contaminated) all.emplace_back(c, true);
  for (double u : clean) all.emplace_back(u, false);
  std::sort(all.begin(), all.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::uint64_t twice_u = 0, clean_below = 0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    std::uint64_t pos = 0, neg = 0;
    for (; j < all.size() && all[j].first == all[i].first; ++j) (all[j].second ? pos : neg)++;
    twice_u += pos * (2 * clean_below + neg);
    clean_below += neg;
    i = j;
  }
  return finish(twice_u, contaminated.size(), clean.size());
}

double auc(const std::vector<double>& contaminated, const std::vector<double>& clean) {
  if (contaminated.size() * clean.size() <= 4096) return auc_pairs(contaminated, clean);
  return auc_rank(contaminated, clean);
}

std::vector<RocPoint> roc_curve(const std::vector<double>& contaminated,
                                const std::vector<double>& clean) {
  require_both(contaminated.size(), clean.size());
  std::vector<double> pos(contaminated), neg(clean);
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::vector<double> thresholds(pos);
  thresholds.insert(thresholds.end(), neg.begin(), neg.end());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  std::vector<RocPoint> roc{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t ip = 0, in = 0;
  for (double t : thresholds) {
    while (ip < pos.size() && pos[ip] >= t) ++ip;
    while (in < neg.size() && neg[in] >= t) ++in;
    roc.push_back({t, static_cast<double>(ip) / static_cast<double>(pos.size()),
                   static_cast<double>(in) / static_cast<double>(neg.size())});
  }
  return roc;
}

double trapezoid_area(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  }
  return area;
}

double orient(double auc, Orientation o) {
  return o == Orientation::higher_means_contaminated ? auc : 1.0 - auc;
}

std::map<Detector, LabeledValues> group_scores(const std::vector<DetectorScore>& scores,
                                               std::map<Detector, int>* unavailable) {
  std::map<Detector, LabeledValues> out;
  for (const auto& s : scores) {
    auto& bucket = out[s.detector];
    if (!s.value) {
      if (unavailable) ++(*unavailable)[s.detector];
      continue;
    }
    (s.label == Label::contaminated ? bucket.contaminated : bucket.clean).push_back(*s.value);
  }
  return out;
}

std::vector<DetectorEval> evaluate_scores(const std::vector<DetectorScore>& scores) {
  if (scores.empty()) throw Error("no items");
  std::map<Detector, int> missing;
  const auto groups = group_scores(scores, &missing);
  std::vector<DetectorEval> out;
  for (Detector d : kAllDetectors) {
    auto it = groups.find(d);
    if (it == groups.end()) continue;
    DetectorEval e;
    e.detector = d;
    e.orientation = orientation_of(d);
    e.n_contaminated = static_cast<int>(it->second.contaminated.size());
    e.n_clean = static_cast<int>(it->second.clean.size());
    e.n_unavailable = missing[d];
    if (e.n_contaminated == 0 && e.n_clean == 0) {
      e.available = false;
      e.auc = e.auc_oriented = std::numeric_limits<double>::quiet_NaN();
      out.push_back(std::move(e));
      continue;
    }
    e.auc = auc(it->second);
    e.auc_oriented = orient(e.auc, e.orientation);
    e.roc = roc_curve(it->second.contaminated, it->second.clean);
    out.push_back(std::move(e));
  }
  return out;
}

LabeledValues pooled_d_values(const std::vector<ItemTrace>& traces, const DvdConfig& cfg) {
  LabeledValues out;
  for (const auto& t : traces) {
    auto& dst = t.item.label == Label::contaminated ? out.contaminated : out.clean;
    const Eigen::VectorXd d = synthetic_difficulties(t, cfg);
    dst.insert(dst.end(), d.data(), d.data() + d.size());
  }
  return out;
}

Histogram histogram(const LabeledValues& values, int bins) {
  if (bins < 1) throw InvariantError("bins must be >= 1");
  if (values.contaminated.empty() && values.clean.empty()) throw Error("no samples");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* v : {&values.contaminated, &values.clean}) {
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  }
  Histogram h;
  const double width = (hi - lo) / bins;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + width * b);
  h.contaminated.assign(static_cast<std::size_t>(bins), 0);
  h.clean.assign(static_cast<std::size_t>(bins), 0);
  auto bin_of = [&](double x) {
    if (width == 0.0) return 0;
    return std::min(bins - 1, static_cast<int>((x - lo) / width));
  };
  for (double x : values.contaminated) ++h.contaminated[static_cast<std::size_t>(bin_of(x))];
  for (double x : values.clean) ++h.clean[static_cast<std::size_t>(bin_of(x))];
  return h;
}

Histogram d_histogram(const std::vector<ItemTrace>& traces, const DvdConfig& cfg, int bins) {
  return histogram(pooled_d_values(traces, cfg), bins);
}

DipResult dip_test(const std::vector<double>& x, int replicates, std::uint64_t seed) {
  if (replicates < 1) throw InvariantError("replicates must be >= 1");
  DipResult r;
  r.dip = dip_statistic(x);
  auto rng = make_engine(0x6469702d6e756c6cULL, seed);
  std::vector<double> null(x.size());
  int at_least = 0;
  for (int b = 0; b < replicates; ++b) {
    for (double& u : null) u = uniform01(rng);
    if (dip_statistic(null) >= r.dip) ++at_least;
  }
  r.p_value = static_cast<double>(at_least + 1) / static_cast<double>(replicates + 1);
  return r;
}

std::vector<std::pair<int, double>> sweep_min_tokens(const std::vector<ItemTrace>& traces,
                                                     const std::vector<int>& m_values,
                                                     int require_samples) {
  std::vector<std::pair<int, double>> out;
  for (int m : m_values) {
    const DvdConfig cfg{m, require_samples};
    std::vector<DetectorScore> scores;
    scores.reserve(traces.size());
    for (const auto& t : traces) scores.push_back(dvd_score(t, cfg));
    out.emplace_back(m, auc(group_scores(scores)[Detector::dvd]));
  }
  return out;
}

ConfidenceInterval paired_bootstrap_auc_difference(const std::vector<DetectorScore>& scores,
                                                   Detector a, Detector b, int replicates,
                                                   std::uint64_t seed, double level) {
  if (replicates < 1) throw InvariantError("replicates must be >= 1");
  struct Pair {
    double a, b;
  };
  std::map<std::string, std::optional<double>> va, vb;
  std::map<std::string, Label> labels;
  for (const auto& s : scores) {
    if (s.detector == a) va[s.item_id] = s.value;
    if (s.detector == b) vb[s.item_id] = s.value;
    labels[s.item_id] = s.label;
  }
  std::vector<Pair> pos, neg;
  for (const auto& [id, x] : va) {
    auto it = vb.find(id);
    if (!x || it == vb.end() || !it->second) continue;
    (labels[id] == Label::contaminated ? pos : neg).push_back({*x, *it->second});
  }
  require_both(pos.size(), neg.size());

  auto rng = make_engine(0x626f6f7473747270ULL, seed);
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(replicates));
  std::vector<double> pa(pos.size()), pb(pos.size()), na(neg.size()), nb(neg.size());
  for (int r = 0; r < replicates; ++r) {
    for (std::size_t i = 0; i < pos.size(); ++i) {
      const auto& p = pos[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pos.size()))];
      pa[i] = p.a;
      pb[i] = p.b;
    }
    for (std::size_t i = 0; i < neg.size(); ++i) {
      const auto& p = neg[static_cast<std::size_t>(uniform01(rng) * static_cast<double>(neg.size()))];
      na[i] = p.a;
      nb[i] = p.b;
    }
    diffs.push_back(orient(auc_rank(pa, na), orientation_of(a)) -
                    orient(auc_rank(pb, nb), orientation_of(b)));
  }
  std::sort(diffs.begin(), diffs.end());
  const double tail = (1.0 - level) / 2.0;
  auto at = [&](double q) {
    const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(diffs.size() - 1) + 0.5));
    return diffs[std::min(idx, diffs.size() - 1)];
  };
  return {at(tail), at(1.0 - tail), level};
}

MultiSeedSummary summarize_seeds(std::vector<SeedAuc> runs) {
  MultiSeedSummary s;
  s.runs = std::move(runs);
  std::map<Detector, std::vector<double>> by;
  for (const auto& r : s.runs) {
    for (const auto& [d, v] : r.auc_oriented) by[d].push_back(v);
  }
  for (auto& [d, v] : by) {
    s.per_detector[d] = mean_std(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
  }
  return s;
}

std::string format_mean_std(const MultiSeedSummary& summary, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision);
  for (Detector d : kAllDetectors) {
    auto it = summary.per_detector.find(d);
    if (it == summary.per_detector.end()) continue;
    os << std::left << std::setw(14) << to_string(d) << it->second.mean << " ± ";
    if (it->second.has_std()) {
      os << it->second.std;
    } else {
      os << "n/a";
    }
    os << "  (seeds=" << summary.runs.size() << ")\n";
  }
  return os.str();
}

std::string format_auc_table(const std::vector<Detector>& rows, const std::vector<AucColumn>& columns,
                             int precision) {
  std::size_t width = 8;
  for (const auto& c : columns) width = std::max(width, c.name.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(14) << "detector";
  for (const auto& c : columns) os << std::right << std::setw(static_cast<int>(width)) << c.name;
  os << '\n' << std::fixed << std::setprecision(precision);
  for (Detector d : rows) {
    os << std::left << std::setw(14) << to_string(d);
    for (const auto& c : columns) {
      os << std::right << std::setw(static_cast<int>(width));
      if (auto it = c.values.find(d); it != c.values.end()) {
        os << it->second;
      } else {
        os << "-";
      }
    }
    os << '\n';
  }
  return os.str();
}

void write_roc_csv(const std::vector<RocPoint>& roc, std::ostream& out) {
  out << "threshold,tpr,fpr\n" << std::setprecision(17);
  for (const auto& p : roc) out << p.threshold << ',' << p.tpr << ',' << p.fpr << '\n';
}

void write_histogram_csv(const Histogram& h, std::ostream& out) {
  out << "bin_lower,bin_upper,contaminated,clean\n" << std::setprecision(17);
  for (std::size_t b = 0; b < h.contaminated.size(); ++b) {
    out << h.edges[b] << ',' << h.edges[b + 1] << ',' << h.contaminated[b] << ',' << h.clean[b] << '\n';
  }
}

void write_report_jsonl(const std::vector<DetectorEval>& evals, std::ostream& out) {
  for (const auto& e : evals) {
    nlohmann::ordered_json j;
    j["detector"] = to_string(e.detector);
    j["orientation"] = to_string(e.orientation);
    j["auc"] = e.available ? nlohmann::ordered_json(e.auc) : nlohmann::ordered_json();
    j["auc_oriented"] = e.available ? nlohmann::ordered_json(e.auc_oriented) : nlohmann::ordered_json();
    j["n_contaminated"] = e.n_contaminated;
    j["n_clean"] = e.n_clean;
    j["n_unavailable"] = e.n_unavailable;
    out << j.dump() << '\n';
  }
}

}  // namespace contamscope
