#include "contamscope/pipeline.hpp"

#include "contamscope/random.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace contamscope {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr const char* kVersion = "1.0.0";

struct UsageError : Error {
  using Error::Error;
};

void prepare_out(const RunConfig& cfg, const std::vector<std::string>& names) {
  if (cfg.out.empty()) throw UsageError("--out is required");
  std::filesystem::create_directories(cfg.out);
  if (cfg.force) return;
  for (const auto& n : names) {
    if (std::filesystem::exists(cfg.out / n)) {
      throw UsageError("refusing to overwrite " + (cfg.out / n).string() + " (use --force)");
    }
  }
}

std::vector<std::string> roc_names(const DetectorConfig& d) {
  std::vector<std::string> out;
  for (Detector det : d.detectors) out.push_back("roc_" + std::string(to_string(det)) + ".csv");
  return out;
}

std::vector<std::string> eval_names(const RunConfig& cfg, bool with_histogram) {
  std::vector<std::string> names{"report.jsonl", "auc_table.txt"};
  for (auto& n : roc_names(cfg.detectors)) names.push_back(std::move(n));
  if (with_histogram) names.push_back("histogram.csv");
  return names;
}

template <typename T, typename Writer>
std::string serialize_lines(const std::vector<T>& xs, Writer w) {
  std::ostringstream os;
  for (const auto& x : xs) w(x, os);
  return os.str();
}

std::string scores_text(const std::vector<DetectorScore>& scores) {
  return serialize_lines(scores, [](const DetectorScore& s, std::ostream& os) { write_score(s, os); });
}

std::vector<ItemTrace> traces_of(const Collection& c) {
  std::vector<ItemTrace> out;
  out.reserve(c.outcomes.size());
  for (const auto& o : c.outcomes) out.push_back(o.trace);
  return out;
}

std::string failures_text(const Collection& c) {
  std::ostringstream os;
  for (const auto& f : c.failures) {
    ordered_json j;
    j["item_id"] = f.item_id;
    j["error"] = f.error;
    os << j.dump() << '\n';
  }
  return os.str();
}

ordered_json degraded_summary(const Collection& c) {
  ordered_json j = ordered_json::object();
  for (DegradedField f : {DegradedField::no_pos_stats, DegradedField::no_reference_scoring,
                          DegradedField::no_embeddings}) {
    int n = 0;
    for (const auto& o : c.outcomes) n += static_cast<int>(o.degraded_fields.count(f));
    if (n > 0) j[std::string(to_string(f))] = n;
  }
  return j;
}

struct Manifest {
  ordered_json body;

  explicit Manifest(const RunConfig& cfg) {
    body["tool"] = "contamscope";
    body["version"] = kVersion;
    body["subcommand"] = cfg.subcommand;
    std::ostringstream hash;
    hash << std::hex << std::setw(16) << std::setfill('0') << config_hash(cfg);
    body["config_hash"] = hash.str();
    body["config"] = ordered_json::parse(canonical_config(cfg));
    body["defaults_in_effect"] = {{"min_tokens_m", cfg.detectors.dvd.min_tokens_m},
                                  {"num_samples", cfg.backend.num_samples},
                                  {"temperature", cfg.backend.temperature},
                                  {"k_percent", cfg.detectors.k_percent},
                                  {"cdd_alpha", cfg.detectors.cdd_alpha}};
    body["seed"] = cfg.seed;
  }

  void backend(const Backend& b, const Collection& c) {
    body["backend"] = {{"identity", b.identity()},
                       {"approximate_pos_stats", b.approximate_pos_stats()},
                       {"degraded_items", degraded_summary(c)},
                       {"request_count", c.request_count}};
    body["items_collected"] = c.outcomes.size();
    body["items_failed"] = c.failures.size();
  }

  std::string text() const { return body.dump(2) + "\n"; }
};

std::string auc_table(const std::vector<DetectorEval>& evals, const std::vector<AucColumn>& extra) {
  std::vector<Detector> rows;
  AucColumn raw{"auc", {}}, oriented{"auc_oriented", {}};
  for (const auto& e : evals) {
    rows.push_back(e.detector);
    if (!e.available) continue;
    raw.values[e.detector] = e.auc;
    oriented.values[e.detector] = e.auc_oriented;
  }
  std::vector<AucColumn> cols{raw, oriented};
  cols.insert(cols.end(), extra.begin(), extra.end());
  return format_auc_table(rows, cols);
}

std::string bootstrap_lines(const RunConfig& cfg, const std::vector<DetectorScore>& scores,
                            const std::vector<DetectorEval>& evals) {
  std::ostringstream os;
  const bool has_dvd = std::any_of(evals.begin(), evals.end(),
                                   [](const auto& e) { return e.detector == Detector::dvd && e.available; });
  if (!has_dvd || cfg.bootstrap_replicates < 1) return "";
  for (const auto& e : evals) {
    if (e.detector == Detector::dvd || !e.available) continue;
    try {
      const auto ci = paired_bootstrap_auc_difference(scores, Detector::dvd, e.detector,
                                                      cfg.bootstrap_replicates, cfg.seed);
      ordered_json j;
      j["comparison"] = "dvd-minus-" + std::string(to_string(e.detector));
      j["statistic"] = "auc_oriented_difference";
      j["ci_level"] = ci.level;
      j["ci_lower"] = ci.lower;
      j["ci_upper"] = ci.upper;
      j["method"] = "paired label-stratified bootstrap";
      os << j.dump() << '\n';
    } catch (const Error&) {
      // Not enough jointly available items for this pair.
    }
  }
  return os.str();
}

// Writes report, table, ROC and histogram files. Returns degenerate_evaluation
// when the labels cannot support an AUC.
ExitCode write_eval(const RunConfig& cfg, const std::vector<DetectorScore>& scores,
                    const std::vector<ItemTrace>* traces, const std::vector<AucColumn>& extra_columns,
                    std::ostream& log) {
  std::vector<DetectorEval> evals;
  try {
    evals = evaluate_scores(scores);
  } catch (const Error& e) {
    log << "evaluation: " << e.what() << '\n';
    return ExitCode::degenerate_evaluation;
  }
  std::ostringstream report;
  write_report_jsonl(evals, report);
  report << bootstrap_lines(cfg, scores, evals);
  write_atomic(cfg.out, "report.jsonl", report.str());
  write_atomic(cfg.out, "auc_table.txt", auc_table(evals, extra_columns));
  for (const auto& e : evals) {
    if (!e.available) continue;
    std::ostringstream roc;
    write_roc_csv(e.roc, roc);
    write_atomic(cfg.out, "roc_" + std::string(to_string(e.detector)) + ".csv", roc.str());
  }
  if (traces && !traces->empty()) {
    std::ostringstream h;
    write_histogram_csv(d_histogram(*traces, cfg.detectors.dvd, cfg.histogram_bins), h);
    write_atomic(cfg.out, "histogram.csv", h.str());
  }
  for (const auto& e : evals) {
    log << std::left << std::setw(14) << to_string(e.detector);
    if (e.available) {
      log << "auc=" << std::fixed << std::setprecision(4) << e.auc << " oriented=" << e.auc_oriented;
    } else {
      log << "unavailable";
    }
    log << " unavailable_items=" << e.n_unavailable << '\n';
  }
  return ExitCode::success;
}

std::string sweep_csv(const std::vector<std::pair<int, double>>& rows) {
  std::ostringstream os;
  os << "m,auc\n" << std::setprecision(17);
  for (const auto& [m, a] : rows) os << m << ',' << a << '\n';
  return os.str();
}

std::vector<int> default_sweep() { return {1, 2, 5, 10, 15, 20, 22, 25, 30, 35, 40, 50, 64, 128, 512}; }

ExitCode worst(ExitCode a, ExitCode b) {
  // degenerate evaluation outranks partial success; both outrank success.
  auto rank = [](ExitCode c) {
    switch (c) {
      case ExitCode::success: return 0;
      case ExitCode::partial_success: return 1;
      case ExitCode::degenerate_evaluation: return 2;
      default: return 3;
    }
  };
  return rank(a) >= rank(b) ? a : b;
}

BackendConfig seeded(const RunConfig& cfg, std::uint64_t seed) {
  BackendConfig b = with_environment(cfg.backend);
  b.seed_base = seed_base_for(seed);
  return b;
}

}  // namespace

std::uint64_t seed_base_for(std::uint64_t seed) { return seed << 32; }

std::vector<DetectorScore> score_traces(const std::vector<ItemTrace>& traces, const DetectorConfig& cfg) {
  std::vector<DetectorScore> out;
  for (const auto& t : traces) {
    auto s = run_all_detectors(t, cfg);
    out.insert(out.end(), s.begin(), s.end());
  }
  return out;
}

MultiSeedSummary multi_seed_eval(const RunConfig& cfg, const std::vector<ItemRecord>& items,
                                 const std::vector<std::uint64_t>& seeds) {
  std::vector<SeedAuc> runs;
  for (std::uint64_t seed : seeds) {
    auto backend = make_backend(seeded(cfg, seed));
    const Collection c = collect_traces(*backend, items);
    SeedAuc r;
    r.seed = seed;
    for (const auto& e : evaluate_scores(score_traces(traces_of(c), cfg.detectors))) {
      if (e.available) r.auc_oriented[e.detector] = e.auc_oriented;
    }
    runs.push_back(std::move(r));
  }
  return summarize_seeds(std::move(runs));
}

std::string canonical_config(const RunConfig& cfg) {
  json j;
  j["subcommand"] = cfg.subcommand;
  j["dataset"] = cfg.dataset.string();
  j["traces"] = cfg.traces.string();
  j["scores"] = cfg.scores.string();
  const auto& b = cfg.backend;
  j["backend"] = {{"base_url", b.base_url},
                  {"model", b.model_name},
                  {"temperature", b.temperature},
                  {"num_samples", b.num_samples},
                  {"max_tokens", b.max_tokens},
                  {"api_style", b.api_style == ApiStyle::chat ? "chat" : "completions"},
                  {"top_logprobs", b.top_logprobs},
                  {"embeddings", b.embeddings},
                  {"sample_embeddings", b.sample_embeddings}};
  const auto& d = cfg.detectors;
  std::vector<std::string> dets;
  for (Detector x : d.detectors) dets.emplace_back(to_string(x));
  j["detectors"] = {{"selected", dets},
                    {"min_tokens_m", d.dvd.min_tokens_m},
                    {"require_samples", d.dvd.require_samples},
                    {"k_percent", d.k_percent},
                    {"cdd_alpha", d.cdd_alpha},
                    {"embedding_mode",
                     d.embedding_mode == EmbeddingMode::pairwise_samples ? "pairwise_samples" : "greedy_vs_reference"}};
  j["seed"] = cfg.seed;
  j["seeds"] = cfg.seeds;
  j["sweep_m"] = cfg.sweep_m;
  j["histogram_bins"] = cfg.histogram_bins;
  j["bootstrap_replicates"] = cfg.bootstrap_replicates;
  if (cfg.subcommand == "simulate") {
    const auto& m = cfg.simulate.contaminated;
    j["simulate"] = {{"pi_m", m.pi_m}, {"mu_m", m.mu_m}, {"sigma_m", m.sigma_m},
                     {"mu_u", m.mu_u}, {"sigma_u", m.sigma_u}, {"items", cfg.simulate.items}};
  }
  if (cfg.subcommand == "make-toy") {
    const auto& t = cfg.toy;
    j["toy"] = {{"vocab_size", t.vocab_size}, {"zipf_exponent", t.zipf_exponent}, {"pi_m", t.pi_m},
                {"lambda_hi", t.lambda_hi}, {"temperature", t.temperature},
                {"response_length", t.response_length}, {"n_contaminated", t.n_contaminated},
                {"n_clean", t.n_clean}, {"seed", t.seed}};
  }
  return j.dump();
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(canonical_config(cfg)); }

void write_atomic(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
  std::filesystem::create_directories(dir);
  const auto target = dir / name;
  const auto tmp = dir / ("." + name + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, target);
}

ExitCode run_collect(const RunConfig& cfg, std::ostream& log) {
  if (cfg.dataset.empty()) throw UsageError("collect requires --dataset");
  prepare_out(cfg, {"traces.jsonl", "failures.jsonl", "manifest.json"});
  const auto items = parse_dataset(cfg.dataset);
  auto backend = make_backend(seeded(cfg, cfg.seed));
  const Collection c = collect_traces(*backend, items);
  write_atomic(cfg.out, "traces.jsonl",
               serialize_lines(traces_of(c), [](const ItemTrace& t, std::ostream& os) { write_trace(t, os); }));
  write_atomic(cfg.out, "failures.jsonl", failures_text(c));
  Manifest m(cfg);
  m.backend(*backend, c);
  write_atomic(cfg.out, "manifest.json", m.text());
  log << "collected " << c.outcomes.size() << " traces, " << c.failures.size() << " failed, "
      << c.request_count << " requests\n";
  return c.failures.empty() ? ExitCode::success : ExitCode::partial_success;
}

ExitCode run_score(const RunConfig& cfg, std::ostream& log) {
  if (cfg.traces.empty()) throw UsageError("score requires --traces");
  prepare_out(cfg, {"scores.jsonl", "manifest.json"});
  const auto traces = read_traces(cfg.traces);
  const auto scores = score_traces(traces, cfg.detectors);
  write_atomic(cfg.out, "scores.jsonl", scores_text(scores));
  Manifest m(cfg);
  m.body["items_scored"] = traces.size();
  write_atomic(cfg.out, "manifest.json", m.text());
  log << "scored " << traces.size() << " traces\n";
  return ExitCode::success;
}

ExitCode run_eval(const RunConfig& cfg, std::ostream& log) {
  if (cfg.scores.empty() && cfg.traces.empty()) throw UsageError("eval requires --scores or --traces");
  std::vector<ItemTrace> traces;
  if (!cfg.traces.empty()) traces = read_traces(cfg.traces);
  prepare_out(cfg, eval_names(cfg, !traces.empty()));
  const auto scores = cfg.scores.empty() ? score_traces(traces, cfg.detectors) : read_scores(cfg.scores);
  return write_eval(cfg, scores, &traces, {}, log);
}

ExitCode run_pipeline(const RunConfig& cfg, std::ostream& log) {
  if (cfg.dataset.empty()) throw UsageError("pipeline requires --dataset");
  if (cfg.backend.base_url.empty() && with_environment(cfg.backend).base_url.empty()) {
    throw UsageError("pipeline requires --backend-url");
  }
  auto names = eval_names(cfg, true);
  for (const char* n : {"traces.jsonl", "failures.jsonl", "scores.jsonl", "manifest.json"}) names.push_back(n);
  if (!cfg.sweep_m.empty()) names.push_back("sweep.csv");
  if (cfg.seeds.size() > 1) names.push_back("multi_seed.txt");
  prepare_out(cfg, names);

  const auto items = parse_dataset(cfg.dataset);
  auto backend = make_backend(seeded(cfg, cfg.seed));
  const Collection c = collect_traces(*backend, items);
  const auto traces = traces_of(c);
  write_atomic(cfg.out, "traces.jsonl",
               serialize_lines(traces, [](const ItemTrace& t, std::ostream& os) { write_trace(t, os); }));
  write_atomic(cfg.out, "failures.jsonl", failures_text(c));
  const auto scores = score_traces(traces, cfg.detectors);
  write_atomic(cfg.out, "scores.jsonl", scores_text(scores));

  std::vector<AucColumn> extra;
  Manifest m(cfg);
  m.backend(*backend, c);
  if (cfg.seeds.size() > 1) {
    const auto summary = multi_seed_eval(cfg, items, cfg.seeds);
    for (const auto& r : summary.runs) extra.push_back({"seed " + std::to_string(r.seed), r.auc_oriented});
    write_atomic(cfg.out, "multi_seed.txt", format_mean_std(summary));
    log << format_mean_std(summary);
  }
  if (!cfg.sweep_m.empty() && !traces.empty()) {
    try {
      write_atomic(cfg.out, "sweep.csv", sweep_csv(sweep_min_tokens(traces, cfg.sweep_m, cfg.detectors.dvd.require_samples)));
    } catch (const Error& e) {
      log << "sweep: " << e.what() << '\n';
    }
  }
  ExitCode code = c.failures.empty() ? ExitCode::success : ExitCode::partial_success;
  code = worst(code, write_eval(cfg, scores, &traces, extra, log));
  write_atomic(cfg.out, "manifest.json", m.text());
  log << "collected " << c.outcomes.size() << " traces, " << c.failures.size() << " failed, "
      << c.request_count << " requests\n";
  return code;
}

ExitCode run_sweep(const RunConfig& cfg, std::ostream& log) {
  if (cfg.traces.empty()) throw UsageError("sweep requires --traces");
  prepare_out(cfg, {"sweep.csv"});
  const auto traces = read_traces(cfg.traces);
  std::vector<std::pair<int, double>> rows;
  try {
    rows = sweep_min_tokens(traces, cfg.sweep_m.empty() ? default_sweep() : cfg.sweep_m,
                            cfg.detectors.dvd.require_samples);
  } catch (const Error& e) {
    log << "sweep: " << e.what() << '\n';
    return ExitCode::degenerate_evaluation;
  }
  write_atomic(cfg.out, "sweep.csv", sweep_csv(rows));
  for (const auto& [mm, a] : rows) log << "m=" << mm << " auc=" << std::fixed << std::setprecision(4) << a << '\n';
  return ExitCode::success;
}

ExitCode run_simulate(const RunConfig& cfg, std::ostream& log) {
  std::vector<std::string> names{"report.jsonl", "auc_table.txt", "roc_dvd.csv", "scores.jsonl", "manifest.json"};
  if (cfg.seeds.size() > 1) names.push_back("multi_seed.txt");
  prepare_out(cfg, names);
  const auto& mix = cfg.simulate.contaminated;
  const MixtureSpec<double> clean{0.0, mix.mu_u, mix.sigma_u, mix.mu_u, mix.sigma_u};
  const int n = cfg.backend.num_samples;
  const auto scores = make_synthetic_dataset(mix, clean, cfg.simulate.items, n, cfg.seed);
  write_atomic(cfg.out, "scores.jsonl", scores_text(scores));
  std::vector<AucColumn> extra;
  if (cfg.seeds.size() > 1 && cfg.simulate.items >= 2) {
    std::vector<SeedAuc> runs;
    for (std::uint64_t s : cfg.seeds) {
      SeedAuc r{s, {}};
      for (const auto& e : evaluate_scores(make_synthetic_dataset(mix, clean, cfg.simulate.items, n, s))) {
        r.auc_oriented[e.detector] = e.auc_oriented;
      }
      runs.push_back(std::move(r));
    }
    const auto summary = summarize_seeds(std::move(runs));
    for (const auto& r : summary.runs) extra.push_back({"seed " + std::to_string(r.seed), r.auc_oriented});
    write_atomic(cfg.out, "multi_seed.txt", format_mean_std(summary));
    log << format_mean_std(summary);
  }
  const ExitCode code = write_eval(cfg, scores, nullptr, extra, log);
  Manifest m(cfg);
  m.body["closed_form"] = {{"mixture_mean", mixture_mean(mix)}, {"mixture_variance", mixture_variance(mix)}};
  write_atomic(cfg.out, "manifest.json", m.text());
  return code;
}

ExitCode run_make_toy(const RunConfig& cfg, std::ostream& log) {
  prepare_out(cfg, {"dataset.jsonl", "toy_spec.json"});
  const ToyBenchmark bench = make_toy_benchmark(cfg.toy);
  ToyModel validated(bench.spec);
  std::ostringstream ds, spec;
  write_dataset(bench.items, ds);
  save_toy_spec(bench.spec, spec);
  write_atomic(cfg.out, "dataset.jsonl", ds.str());
  write_atomic(cfg.out, "toy_spec.json", spec.str());
  log << "wrote " << bench.items.size() << " items and a " << bench.spec.vocabulary.size()
      << "-token toy model to " << cfg.out.string() << '\n';
  return ExitCode::success;
}

ExitCode run(const RunConfig& cfg, std::ostream& log) {
  try {
    const auto& s = cfg.subcommand;
    validate(cfg.detectors);
    if (s == "collect") return run_collect(cfg, log);
    if (s == "score") return run_score(cfg, log);
    if (s == "eval") return run_eval(cfg, log);
    if (s == "pipeline") return run_pipeline(cfg, log);
    if (s == "sweep") return run_sweep(cfg, log);
    if (s == "simulate") return run_simulate(cfg, log);
    if (s == "make-toy") return run_make_toy(cfg, log);
    throw UsageError("unknown subcommand '" + s + "'");
  } catch (const UsageError& e) {
    log << "error: " << e.what() << '\n';
    return ExitCode::usage;
  } catch (const CapabilityError& e) {
    log << "backend error: " << e.what() << '\n';
    return ExitCode::backend_failure;
  } catch (const Error& e) {
    log << "error: " << e.what() << '\n';
    return ExitCode::usage;
  } catch (const std::filesystem::filesystem_error& e) {
    log << "error: " << e.what() << '\n';
    return ExitCode::usage;
  }
}

}  // namespace contamscope
