#include "fade/experiment.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <filesystem>
#include <fstream>

#include "fade/errors.hpp"

namespace fade {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kTagSynthetic = 21;

std::string format_name(LogFormat f) { return f == LogFormat::MovielensDat ? "movielens-dat" : "csv"; }

std::string task_name(EvalTask t) { return t == EvalTask::Remain ? "remain" : "next"; }

ordered_json triple_json(const MetricTriple& m) {
  return ordered_json{{"ndcg", m.ndcg}, {"f1", m.f1}, {"hit", m.hit}};
}

MetricTriple triple_from_json(const ordered_json& j) {
  return {j.at("ndcg").get<double>(), j.at("f1").get<double>(), j.at("hit").get<double>()};
}

MetricTriple abs_triple(const MetricTriple& m) {
  return {std::abs(m.ndcg), std::abs(m.f1), std::abs(m.hit)};
}

void add_triple(MetricTriple& acc, const MetricTriple& m) {
  acc.ndcg += m.ndcg;
  acc.f1 += m.f1;
  acc.hit += m.hit;
}

MetricTriple scale_triple(const MetricTriple& m, double s) {
  return {m.ndcg * s, m.f1 * s, m.hit * s};
}

StrategySummary summarize(const StrategyReport& sr) {
  StrategySummary s;
  MetricTriple perf, abs_pd, signed_pd;
  int pd_periods = 0, perf_periods = 0;
  // Summaries average across the dynamic-update periods t >= 1; period 0 is
  // the shared pretrained model and is reported per-period only.
  for (const auto& p : sr.periods) {
    if (p.period == 0 && sr.periods.size() > 1) continue;
    add_triple(perf, p.overall);
    ++perf_periods;
    if (p.pd) {
      add_triple(abs_pd, abs_triple(*p.pd));
      add_triple(signed_pd, *p.pd);
      ++pd_periods;
    }
  }
  s.mean_perf = scale_triple(perf, perf_periods > 0 ? 1.0 / perf_periods : 0.0);
  if (pd_periods > 0) {
    s.mean_abs_pd = scale_triple(abs_pd, 1.0 / pd_periods);
    s.mean_signed_pd = scale_triple(signed_pd, 1.0 / pd_periods);
  }
  double update_seconds = 0.0;
  for (std::size_t t = 1; t < sr.period_logs.size(); ++t) update_seconds += sr.period_logs[t].seconds;
  const auto updates = static_cast<double>(sr.period_logs.size() > 1 ? sr.period_logs.size() - 1 : 1);
  s.mean_update_seconds = update_seconds / updates;
  s.final_period_seconds = sr.period_logs.empty() ? 0.0 : sr.period_logs.back().seconds;
  for (const auto& log : sr.period_logs) s.empty_group_batches += log.empty_group_batches;
  return s;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << text;
  if (!f) throw std::runtime_error("short write on " + path);
}

void write_trajectory_json(const std::string& path, const StrategyReport& sr) {
  ordered_json j;
  j["strategy"] = sr.name;
  auto& periods = j["periods"] = ordered_json::array();
  for (const auto& log : sr.period_logs) {
    periods.push_back(ordered_json{{"t", log.period},
                                   {"seconds", log.seconds},
                                   {"epoch_losses", log.epoch_losses},
                                   {"epoch_mean_dpd", log.epoch_mean_dpd},
                                   {"empty_group_batches", log.empty_group_batches},
                                   {"interactions", log.interactions},
                                   {"bpr_pair_ops", log.bpr_pair_ops},
                                   {"fairness_set_ops", log.fairness_set_ops},
                                   {"restarted", log.restarted}});
  }
  write_text_file(path, j.dump(2) + "\n");
}

void write_csv(const std::string& path, const RunReport& report) {
  std::string csv = "strategy,period,group,metric,value\n";
  auto row = [&](const std::string& strategy, int period, const char* group, const char* metric,
                 double value) {
    csv += strategy + ',' + std::to_string(period) + ',' + group + ',' + metric + ',';
    if (std::isnan(value)) csv += "nan";
    else csv += ordered_json(value).dump();
    csv += '\n';
  };
  const double nan = std::nan("");
  for (const auto& sr : report.strategies) {
    for (const auto& p : sr.periods) {
      row(sr.name, p.period, "overall", "ndcg", p.overall.ndcg);
      row(sr.name, p.period, "overall", "f1", p.overall.f1);
      row(sr.name, p.period, "overall", "hit", p.overall.hit);
      row(sr.name, p.period, "group0", "ndcg", p.group0.mean.ndcg);
      row(sr.name, p.period, "group0", "f1", p.group0.mean.f1);
      row(sr.name, p.period, "group0", "hit", p.group0.mean.hit);
      row(sr.name, p.period, "group1", "ndcg", p.group1.mean.ndcg);
      row(sr.name, p.period, "group1", "f1", p.group1.mean.f1);
      row(sr.name, p.period, "group1", "hit", p.group1.mean.hit);
      row(sr.name, p.period, "pd", "ndcg", p.pd ? p.pd->ndcg : nan);
      row(sr.name, p.period, "pd", "f1", p.pd ? p.pd->f1 : nan);
      row(sr.name, p.period, "pd", "hit", p.pd ? p.pd->hit : nan);
    }
  }
  write_text_file(path, csv);
}

void write_plot_tsv(const std::string& out_dir, const RunReport& report) {
  struct Family {
    const char* file;
    double MetricTriple::*field;
    bool abs_pd;
  };
  const Family families[] = {
      {"plot_perf_ndcg.tsv", &MetricTriple::ndcg, false},
      {"plot_perf_f1.tsv", &MetricTriple::f1, false},
      {"plot_perf_hit.tsv", &MetricTriple::hit, false},
      {"plot_abspd_ndcg.tsv", &MetricTriple::ndcg, true},
      {"plot_abspd_f1.tsv", &MetricTriple::f1, true},
      {"plot_abspd_hit.tsv", &MetricTriple::hit, true},
  };
  for (const auto& fam : families) {
    std::string tsv = "period\tseries\tvalue\n";
    for (const auto& sr : report.strategies) {
      for (const auto& p : sr.periods) {
        double value;
        if (fam.abs_pd) {
          if (!p.pd) continue;
          value = std::abs((*p.pd).*fam.field);
        } else {
          value = p.overall.*fam.field;
        }
        tsv += std::to_string(p.period) + '\t' + sr.name + '\t' + ordered_json(value).dump() + '\n';
      }
    }
    write_text_file(out_dir + "/" + fam.file, tsv);
  }
}

ordered_json config_json(const ExperimentConfig& cfg) {
  ordered_json j;
  j["data"] = cfg.data_path;
  j["attrs"] = cfg.attrs_path;
  j["format"] = format_name(cfg.format);
  if (cfg.synthetic) {
    const auto& s = *cfg.synthetic;
    j["synthetic"] = ordered_json{{"users", s.users},
                                  {"items", s.items},
                                  {"periods", s.periods},
                                  {"disparity", s.disparity},
                                  {"group1_fraction", s.group1_fraction},
                                  {"interactions_per_user", s.interactions_per_user},
                                  {"group1_interaction_scale", s.group1_interaction_scale},
                                  {"clusters", s.clusters},
                                  {"base_noise", s.base_noise}};
  }
  j["threshold"] = cfg.binarize_threshold;
  j["pretrain_fraction"] = cfg.pretrain_fraction;
  j["dynamic_fraction"] = cfg.dynamic_fraction;
  j["periods"] = cfg.periods;
  auto& strategies = j["strategies"] = ordered_json::array();
  for (const auto& s : cfg.strategies) strategies.push_back(s.label());
  j["hyperparams"] = ordered_json{{"lambda", cfg.hp.lambda},
                                  {"tau", cfg.hp.tau},
                                  {"mu", cfg.hp.mu},
                                  {"n_neg", cfg.hp.n_neg},
                                  {"lr", cfg.hp.lr},
                                  {"l2", cfg.hp.l2},
                                  {"epochs_pretrain", cfg.hp.epochs_pretrain},
                                  {"epochs_update", cfg.hp.epochs_update},
                                  {"batch_size", cfg.hp.batch_size},
                                  {"dim", cfg.hp.dim},
                                  {"init_scale", cfg.hp.init_scale},
                                  {"seed", cfg.hp.seed}};
  j["eval"] = ordered_json{{"k", cfg.eval.k},
                           {"negatives", cfg.eval.num_eval_negatives},
                           {"task", task_name(cfg.eval.task)},
                           {"seed", cfg.eval.seed}};
  return j;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (strategies.empty()) throw ConfigError("config: at least one strategy is required");
  for (std::size_t a = 0; a < strategies.size(); ++a)
    for (std::size_t b = a + 1; b < strategies.size(); ++b)
      if (strategies[a].label() == strategies[b].label())
        throw ConfigError("config: duplicate strategy '" + strategies[a].label() + "'");
  if (synthetic) {
    const auto& s = *synthetic;
    if (s.users < 2 || s.items < 2) throw ConfigError("config: synthetic fixture too small");
    if (s.periods < 1) throw ConfigError("config: synthetic periods must be >= 1");
    if (!(s.disparity >= 0.0 && s.disparity <= 1.0))
      throw ConfigError("config: disparity must be in [0,1]");
    if (!(s.group1_fraction > 0.0 && s.group1_fraction < 1.0))
      throw ConfigError("config: group1 fraction must be in (0,1)");
    if (s.interactions_per_user < 1) throw ConfigError("config: interactions per user must be >= 1");
    if (!(s.group1_interaction_scale > 0.0 && s.group1_interaction_scale <= 1.0))
      throw ConfigError("config: group1 interaction scale must be in (0,1]");
    if (s.clusters < 1 || s.clusters > s.items) throw ConfigError("config: bad cluster count");
    if (!(s.base_noise >= 0.0 && s.base_noise <= 1.0))
      throw ConfigError("config: base noise must be in [0,1]");
  } else {
    if (data_path.empty()) throw ConfigError("config: data path required (or use synthetic)");
    if (attrs_path.empty()) throw ConfigError("config: attribute path required");
    if (!fs::exists(data_path)) throw ConfigError("config: missing data file " + data_path);
    if (!fs::exists(attrs_path)) throw ConfigError("config: missing attribute file " + attrs_path);
  }
  if (binarize_threshold < 0) throw ConfigError("config: threshold must be >= 0");
  if (periods < 1) throw ConfigError("config: periods must be >= 1");
  if (!(pretrain_fraction > 0.0 && pretrain_fraction < 1.0))
    throw ConfigError("config: pretrain fraction must be in (0,1)");
  if (!(dynamic_fraction > 0.0 && pretrain_fraction + dynamic_fraction <= 1.0 + 1e-12))
    throw ConfigError("config: fractions must satisfy pretrain + dynamic <= 1");
  hp.validate();
  eval.validate();
}

InteractionLog generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, {kTagSynthetic});
  InteractionLog log;
  log.user_count = spec.users;
  log.item_count = spec.items;
  log.original_user_ids.resize(static_cast<std::size_t>(spec.users));
  log.original_item_ids.resize(static_cast<std::size_t>(spec.items));
  for (int u = 0; u < spec.users; ++u) log.original_user_ids[static_cast<std::size_t>(u)] = u;
  for (int i = 0; i < spec.items; ++i) log.original_item_ids[static_cast<std::size_t>(i)] = i;

  const int group0_count = spec.users - static_cast<int>(std::lround(spec.group1_fraction * spec.users));
  log.user_attribute.resize(static_cast<std::size_t>(spec.users));
  std::vector<int> archetype_of(static_cast<std::size_t>(spec.users));
  for (int u = 0; u < spec.users; ++u) {
    log.user_attribute[static_cast<std::size_t>(u)] = u < group0_count ? 0 : 1;
    archetype_of[static_cast<std::size_t>(u)] = rng.uniform_int(spec.clusters);
  }

  // Ground-truth preferences: users sit near one of `clusters` archetypes in
  // a latent space, with an idiosyncratic offset. A user's preferred pool at
  // any moment is the top slice of items by latent affinity; draws mix that
  // pool with uniform junk at the noise floor and never repeat an item, so
  // later periods test generalization to unseen items.
  //
  // The planted disparity is concept drift on the disadvantaged group:
  // group-1 preference vectors move along a per-user direction as time
  // advances, at rate `disparity`. A model that under-serves the smaller
  // group's per-period data keeps lagging behind their current preferences.
  constexpr int kLatentDim = 32;
  constexpr double kIdiosyncrasy = 0.6;
  constexpr double kDriftScale = 2.0;  // latent distance traveled at disparity = 1
  constexpr int kDriftBuckets = 10;
  constexpr std::int64_t kHorizon = 1'000'000'000;
  const int pool_size =
      std::min(spec.items, std::max(spec.interactions_per_user * 3, spec.interactions_per_user + 8));

  std::vector<double> archetypes(static_cast<std::size_t>(spec.clusters) * kLatentDim);
  for (auto& v : archetypes) v = rng.normal();
  std::vector<double> item_latent(static_cast<std::size_t>(spec.items) * kLatentDim);
  for (auto& v : item_latent) v = rng.normal();

  const int group1_budget = std::max(
      1, static_cast<int>(std::lround(spec.group1_interaction_scale * spec.interactions_per_user)));
  log.records.reserve(static_cast<std::size_t>(spec.users) * spec.interactions_per_user);

  std::vector<double> z(kLatentDim), drift(kLatentDim), z_now(kLatentDim);
  std::vector<double> affinity(static_cast<std::size_t>(spec.items));
  std::vector<int> order(static_cast<std::size_t>(spec.items));
  std::vector<std::int64_t> stamps;
  std::vector<std::uint8_t> used(static_cast<std::size_t>(spec.items));
  for (int u = 0; u < spec.users; ++u) {
    const std::uint8_t attr = log.user_attribute[static_cast<std::size_t>(u)];
    const double drift_rate = attr == 1 ? spec.disparity * kDriftScale : 0.0;
    const int budget = std::min(attr == 1 ? group1_budget : spec.interactions_per_user, pool_size);

    const double* arch = archetypes.data() +
                         static_cast<std::size_t>(archetype_of[static_cast<std::size_t>(u)]) * kLatentDim;
    for (int j = 0; j < kLatentDim; ++j) {
      z[static_cast<std::size_t>(j)] = arch[j] + kIdiosyncrasy * rng.normal();
      drift[static_cast<std::size_t>(j)] = rng.normal();
    }

    stamps.resize(static_cast<std::size_t>(budget));
    for (auto& ts : stamps) ts = static_cast<std::int64_t>(rng.uniform_u64(kHorizon));
    std::sort(stamps.begin(), stamps.end());

    std::fill(used.begin(), used.end(), 0);
    int bucket = -1;
    for (int k = 0; k < budget; ++k) {
      const std::int64_t ts = stamps[static_cast<std::size_t>(k)];
      const int ts_bucket = static_cast<int>(ts * kDriftBuckets / kHorizon);
      if (ts_bucket != bucket) {  // refresh the preference pool as z moves
        bucket = ts_bucket;
        const double progress = (static_cast<double>(bucket) + 0.5) / kDriftBuckets;
        for (int j = 0; j < kLatentDim; ++j)
          z_now[static_cast<std::size_t>(j)] =
              z[static_cast<std::size_t>(j)] + drift_rate * progress * drift[static_cast<std::size_t>(j)];
        for (int i = 0; i < spec.items; ++i) {
          const double* w = item_latent.data() + static_cast<std::size_t>(i) * kLatentDim;
          double dot = 0.0;
          for (int j = 0; j < kLatentDim; ++j) dot += z_now[static_cast<std::size_t>(j)] * w[j];
          affinity[static_cast<std::size_t>(i)] = dot;
        }
        std::iota(order.begin(), order.end(), 0);
        std::nth_element(order.begin(), order.begin() + pool_size - 1, order.end(), [&](int a, int b) {
          return affinity[static_cast<std::size_t>(a)] > affinity[static_cast<std::size_t>(b)];
        });
      }

      ItemId item = -1;
      for (int attempt = 0; attempt < 64 && item < 0; ++attempt) {
        ItemId candidate;
        if (rng.uniform_double() < spec.base_noise) {
          candidate = static_cast<ItemId>(rng.uniform_int(spec.items));
        } else {
          candidate = static_cast<ItemId>(order[static_cast<std::size_t>(rng.uniform_int(pool_size))]);
        }
        if (!used[static_cast<std::size_t>(candidate)]) item = candidate;
      }
      if (item < 0) {  // pool exhausted, take any unseen item
        auto probe = static_cast<ItemId>(rng.uniform_int(spec.items));
        while (used[static_cast<std::size_t>(probe)]) probe = static_cast<ItemId>((probe + 1) % spec.items);
        item = probe;
      }
      used[static_cast<std::size_t>(item)] = 1;
      log.records.push_back({static_cast<UserId>(u), item, 5, ts, attr});
    }
  }
  return log;
}

RunReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  InteractionLog raw = cfg.synthetic
                           ? generate_synthetic(*cfg.synthetic, cfg.hp.seed)
                           : parse_interactions_files(cfg.data_path, cfg.format, cfg.attrs_path,
                                                      cfg.attribute_mapping);
  InteractionLog binary = binarize(raw, cfg.binarize_threshold);
  const int periods = cfg.synthetic ? cfg.synthetic->periods : cfg.periods;
  SplitDataset split = build_split(binary, cfg.pretrain_fraction, cfg.dynamic_fraction, periods);
  Evaluator evaluator(split, cfg.eval);

  RunReport report;
  report.num_users = split.num_users;
  report.num_items = split.num_items;
  report.dynamic_periods = split.dynamic_periods();
  report.interactions = binary.records.size();

  const bool writing = !cfg.out_dir.empty();
  if (writing) {
    fs::create_directories(cfg.out_dir);
    write_id_maps(binary, cfg.out_dir);
  }

  PretrainCache cache;
  try {
    for (const auto& strategy : cfg.strategies) {
      StrategyReport sr;
      sr.strategy = strategy;
      sr.name = strategy.label();
      sr.lambda = strategy.lambda_override.value_or(cfg.hp.lambda);

      TrainingTrajectory traj = run_strategy(strategy, split, cfg.hp, &cache);
      for (int t = 0; t < split.dynamic_periods(); ++t) {
        sr.periods.push_back(evaluator.evaluate(traj.checkpoints[static_cast<std::size_t>(t)], t));
      }
      sr.period_logs = traj.period_logs;
      sr.summary = summarize(sr);

      if (writing) {
        const std::string run_dir = cfg.out_dir + "/" + sr.name;
        fs::create_directories(run_dir);
        Rng ckpt_rng(cfg.hp.seed);
        for (int t = 0; t < split.dynamic_periods(); ++t) {
          save_checkpoint(run_dir + "/period_" + std::to_string(t) + ".ckpt",
                          traj.checkpoints[static_cast<std::size_t>(t)],
                          traj.optimizer_states[static_cast<std::size_t>(t)], ckpt_rng);
        }
        write_trajectory_json(run_dir + "/trajectory.json", sr);
      }
      report.strategies.push_back(std::move(sr));
    }
  } catch (const std::exception& e) {
    if (writing) {
      write_text_file(cfg.out_dir + "/FAILED", std::string(e.what()) + "\n");
      write_text_file(cfg.out_dir + "/report.json", report_to_json(report, cfg));
    }
    throw;
  }

  if (writing) {
    emit_report(report, cfg, cfg.out_dir,
                {ReportFormat::Json, ReportFormat::Csv, ReportFormat::Tsv});
  }
  return report;
}

void emit_report(const RunReport& report, const ExperimentConfig& cfg, const std::string& out_dir,
                 const std::vector<ReportFormat>& formats) {
  fs::create_directories(out_dir);
  for (ReportFormat fmt : formats) {
    switch (fmt) {
      case ReportFormat::Json:
        write_text_file(out_dir + "/report.json", report_to_json(report, cfg));
        break;
      case ReportFormat::Csv:
        write_csv(out_dir + "/report.csv", report);
        break;
      case ReportFormat::Tsv:
        write_plot_tsv(out_dir, report);
        break;
    }
  }
}

std::string report_to_json(const RunReport& report, const ExperimentConfig& cfg) {
  ordered_json j;
  j["schema"] = "fade-report-v1";
  j["config"] = config_json(cfg);
  j["dataset"] = ordered_json{{"users", report.num_users},
                              {"items", report.num_items},
                              {"dynamic_periods", report.dynamic_periods},
                              {"interactions", report.interactions}};
  auto& strategies = j["strategies"] = ordered_json::array();
  for (const auto& sr : report.strategies) {
    ordered_json sj;
    sj["name"] = sr.name;
    sj["lambda"] = sr.lambda;
    if (sr.strategy.restart_every) sj["restart_every"] = *sr.strategy.restart_every;
    auto& periods = sj["periods"] = ordered_json::array();
    for (const auto& p : sr.periods) {
      ordered_json pj;
      pj["t"] = p.period;
      pj["overall"] = triple_json(p.overall);
      pj["group0"] = triple_json(p.group0.mean);
      pj["group0"]["users"] = p.group0.user_count;
      pj["group1"] = triple_json(p.group1.mean);
      pj["group1"]["users"] = p.group1.user_count;
      pj["pd"] = p.pd ? triple_json(*p.pd) : ordered_json(nullptr);
      pj["evaluated_users"] = p.evaluated_users;
      pj["excluded_users"] = p.excluded_users;
      periods.push_back(std::move(pj));
    }
    sj["summary"] = ordered_json{{"mean_perf", triple_json(sr.summary.mean_perf)},
                                 {"mean_abs_pd", triple_json(sr.summary.mean_abs_pd)},
                                 {"mean_signed_pd", triple_json(sr.summary.mean_signed_pd)},
                                 {"empty_group_batches", sr.summary.empty_group_batches}};
    strategies.push_back(std::move(sj));
  }
  return j.dump(2) + "\n";
}

RunReport report_from_json(const std::string& json_text) {
  const auto j = ordered_json::parse(json_text);
  RunReport report;
  report.num_users = j.at("dataset").at("users").get<int>();
  report.num_items = j.at("dataset").at("items").get<int>();
  report.dynamic_periods = j.at("dataset").at("dynamic_periods").get<int>();
  report.interactions = j.at("dataset").at("interactions").get<std::size_t>();
  for (const auto& sj : j.at("strategies")) {
    StrategyReport sr;
    sr.name = sj.at("name").get<std::string>();
    sr.strategy = parse_strategy(sr.name);
    sr.lambda = sj.at("lambda").get<double>();
    for (const auto& pj : sj.at("periods")) {
      PeriodMetrics p;
      p.period = pj.at("t").get<int>();
      p.overall = triple_from_json(pj.at("overall"));
      p.group0.mean = triple_from_json(pj.at("group0"));
      p.group0.user_count = pj.at("group0").at("users").get<int>();
      p.group1.mean = triple_from_json(pj.at("group1"));
      p.group1.user_count = pj.at("group1").at("users").get<int>();
      if (!pj.at("pd").is_null()) p.pd = triple_from_json(pj.at("pd"));
      p.evaluated_users = pj.at("evaluated_users").get<int>();
      p.excluded_users = pj.at("excluded_users").get<int>();
      sr.periods.push_back(std::move(p));
    }
    sr.summary.mean_perf = triple_from_json(sj.at("summary").at("mean_perf"));
    sr.summary.mean_abs_pd = triple_from_json(sj.at("summary").at("mean_abs_pd"));
    sr.summary.mean_signed_pd = triple_from_json(sj.at("summary").at("mean_signed_pd"));
    sr.summary.empty_group_batches = sj.at("summary").at("empty_group_batches").get<long long>();
    report.strategies.push_back(std::move(sr));
  }
  return report;
}

}  // namespace fade
