#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fade/bounds.hpp"
#include "fade/errors.hpp"
#include "fade/experiment.hpp"

namespace {

using fade::ConfigError;
using fade::ParseError;
using ordered_json = nlohmann::ordered_json;

fade::LogFormat parse_format(const std::string& name) {
  if (name == "movielens-dat") return fade::LogFormat::MovielensDat;
  if (name == "csv") return fade::LogFormat::Csv;
  throw ConfigError("unknown format '" + name + "' (expected movielens-dat or csv)");
}

// Two letters: the group-1 code then the group-0 code, e.g. "FM".
fade::AttributeMapping parse_attr_codes(const std::string& text) {
  if (text.size() != 2) throw ConfigError("attr-codes wants two letters, e.g. FM");
  return {text[0], text[1]};
}

fade::EvalTask parse_task(const std::string& name) {
  if (name == "remain") return fade::EvalTask::Remain;
  if (name == "next") return fade::EvalTask::Next;
  throw ConfigError("unknown task '" + name + "' (expected remain or next)");
}

// "users=2000,items=500,periods=5,disparity=0.6" with ',' or ' ' separators.
fade::SyntheticSpec parse_synthetic(const std::string& text) {
  fade::SyntheticSpec spec;
  std::string normalized = text;
  for (char& c : normalized)
    if (c == ',' || c == ';') c = ' ';
  std::istringstream in(normalized);
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ConfigError("bad synthetic option '" + token + "'");
    const std::string key = token.substr(0, eq);
    const std::string value = token.substr(eq + 1);
    try {
      if (key == "users") spec.users = std::stoi(value);
      else if (key == "items") spec.items = std::stoi(value);
      else if (key == "periods") spec.periods = std::stoi(value);
      else if (key == "disparity") spec.disparity = std::stod(value);
      else if (key == "group1-frac") spec.group1_fraction = std::stod(value);
      else if (key == "group1-scale") spec.group1_interaction_scale = std::stod(value);
      else if (key == "interactions") spec.interactions_per_user = std::stoi(value);
      else if (key == "clusters") spec.clusters = std::stoi(value);
      else if (key == "base-noise") spec.base_noise = std::stod(value);
      else throw ConfigError("unknown synthetic option '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw ConfigError("bad value for synthetic option '" + key + "'");
    }
  }
  return spec;
}

// Declarative config file: one key=value per line, '#' comments, keys named
// after the long flags. Flags given on the command line win.
void apply_config_file(const std::string& path, fade::ExperimentConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r'))
      line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line = line.substr(start);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config file line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "data") cfg.data_path = value;
      else if (key == "attrs") cfg.attrs_path = value;
      else if (key == "format") cfg.format = parse_format(value);
      else if (key == "attr-codes") cfg.attribute_mapping = parse_attr_codes(value);
      else if (key == "synthetic") cfg.synthetic = parse_synthetic(value);
      else if (key == "threshold") cfg.binarize_threshold = std::stoi(value);
      else if (key == "pretrain-frac") cfg.pretrain_fraction = std::stod(value);
      else if (key == "dynamic-frac") cfg.dynamic_fraction = std::stod(value);
      else if (key == "periods") cfg.periods = std::stoi(value);
      else if (key == "strategy") cfg.strategies.push_back(fade::parse_strategy(value));
      else if (key == "lambda") cfg.hp.lambda = std::stod(value);
      else if (key == "tau") cfg.hp.tau = std::stod(value);
      else if (key == "mu") cfg.hp.mu = std::stoi(value);
      else if (key == "neg") cfg.hp.n_neg = std::stoi(value);
      else if (key == "dim") cfg.hp.dim = std::stoi(value);
      else if (key == "lr") cfg.hp.lr = std::stod(value);
      else if (key == "l2") cfg.hp.l2 = std::stod(value);
      else if (key == "epochs-pretrain") cfg.hp.epochs_pretrain = std::stoi(value);
      else if (key == "epochs-update") cfg.hp.epochs_update = std::stoi(value);
      else if (key == "batch") cfg.hp.batch_size = std::stoi(value);
      else if (key == "init-scale") cfg.hp.init_scale = std::stod(value);
      else if (key == "k") cfg.eval.k = std::stoi(value);
      else if (key == "task") cfg.eval.task = parse_task(value);
      else if (key == "eval-negs") cfg.eval.num_eval_negatives = std::stoi(value);
      else if (key == "seed") { cfg.hp.seed = std::stoull(value); cfg.eval.seed = cfg.hp.seed; }
      else if (key == "out") cfg.out_dir = value;
      else if (key == "restart-every") {
        const int r = std::stoi(value);
        for (auto& s : cfg.strategies)
          if (s.base == fade::BaseStrategy::Finetune) s.restart_every = r;
      } else {
        throw ConfigError("config file line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("config file line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
}

int cmd_run(const fade::ExperimentConfig& cfg) {
  const fade::RunReport report = fade::run_experiment(cfg);
  for (const auto& sr : report.strategies) {
    std::cout << sr.name << ": mean NDCG@" << cfg.eval.k << " = " << sr.summary.mean_perf.ndcg
              << ", mean |PD| (ndcg) = " << sr.summary.mean_abs_pd.ndcg
              << ", mean |PD| (hit) = " << sr.summary.mean_abs_pd.hit << '\n';
  }
  if (!cfg.out_dir.empty()) std::cout << "report written to " << cfg.out_dir << '\n';
  return 0;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> out;
  std::string normalized = text;
  for (char& c : normalized)
    if (c == ',') c = ' ';
  std::istringstream in(normalized);
  double v;
  while (in >> v) out.push_back(v);
  if (!in.eof()) throw ConfigError("bad number list '" + text + "'");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"user-side-fair dynamic recommendation engine"};
  app.require_subcommand(1);

  // --- run ---
  auto* run = app.add_subcommand("run", "run a dynamic-training experiment");
  std::string config_path, data_path, attrs_path, format = "csv", synthetic_text, task = "remain";
  std::string out_dir;
  double pretrain_frac = 0.6, dynamic_frac = 0.28, lambda = 1.0, tau = 3.0, lr = 0.001, l2 = 0.0001;
  double init_scale = 0.01;
  int periods = 7, mu = 4, n_neg = 4, dim = 64, epochs_pretrain = 50, epochs_update = 10;
  int batch = 1024, k = 20, eval_negs = 100, threshold = 2, restart_every = 0;
  std::uint64_t seed = 42;
  std::vector<std::string> strategy_texts;

  auto* opt_config = run->add_option("--config", config_path, "config file (key=value lines)");
  auto* opt_data = run->add_option("--data", data_path, "interaction log path");
  auto* opt_attrs = run->add_option("--attrs", attrs_path, "user attribute file path");
  auto* opt_format = run->add_option("--format", format, "movielens-dat|csv");
  std::string attr_codes = "FM";
  auto* opt_codes = run->add_option("--attr-codes", attr_codes,
                                    "gender letters mapping to groups 1 and 0 (movielens-dat)");
  auto* opt_synth = run->add_option("--synthetic", synthetic_text,
                                    "built-in fixture, e.g. users=2000,items=500,periods=5,disparity=0.6");
  auto* opt_threshold = run->add_option("--threshold", threshold, "keep ratings > threshold");
  auto* opt_pf = run->add_option("--pretrain-frac", pretrain_frac, "pretrain fraction");
  auto* opt_df = run->add_option("--dynamic-frac", dynamic_frac, "dynamic fraction");
  auto* opt_periods = run->add_option("--periods", periods, "number of dynamic periods");
  auto* opt_strategy = run->add_option("--strategy", strategy_texts,
                                       "repeatable: pretrain|pretrain-fair|retrain|retrain-fair|"
                                       "finetune|fade|fade-abs, options like fade:lambda=2");
  auto* opt_lambda = run->add_option("--lambda", lambda, "fairness scale");
  auto* opt_tau = run->add_option("--tau", tau, "relaxation temperature");
  auto* opt_mu = run->add_option("--mu", mu, "fairness negatives per interaction");
  auto* opt_neg = run->add_option("--neg", n_neg, "BPR negatives per interaction");
  auto* opt_dim = run->add_option("--dim", dim, "embedding dimension");
  auto* opt_lr = run->add_option("--lr", lr, "learning rate");
  auto* opt_l2 = run->add_option("--l2", l2, "L2 regularization");
  auto* opt_ep = run->add_option("--epochs-pretrain", epochs_pretrain, "pretrain epochs");
  auto* opt_eu = run->add_option("--epochs-update", epochs_update, "dynamic update epochs");
  auto* opt_batch = run->add_option("--batch", batch, "batch size");
  auto* opt_scale = run->add_option("--init-scale", init_scale, "embedding init scale");
  auto* opt_k = run->add_option("--k", k, "metric cutoff K");
  auto* opt_task = run->add_option("--task", task, "remain|next");
  auto* opt_en = run->add_option("--eval-negs", eval_negs, "eval negatives per user");
  auto* opt_re = run->add_option("--restart-every", restart_every,
                                 "full retrain every r-th period for fine-tune strategies");
  auto* opt_seed = run->add_option("--seed", seed, "master seed");
  auto* opt_out = run->add_option("--out", out_dir, "output directory");

  // --- bounds ---
  auto* bounds = app.add_subcommand("bounds", "evaluate the fine-tune/retrain loss bounds");
  double b_gamma = 0.5, b_delta = 0.1, b_m0 = 10000, b_m1 = 1000, b_lstar = 0.0, b_eps = 0.0;
  int b_tte = 2;
  std::string b_dlist;
  bounds->add_option("--gamma", b_gamma, "proximal fine-tuning weight in (0,1)")->required();
  bounds->add_option("--t-te", b_tte, "test period index (>= 2)")->required();
  bounds->add_option("--delta", b_delta, "confidence level in (0,1)")->required();
  bounds->add_option("--m0", b_m0, "pretrain dataset size")->required();
  bounds->add_option("--m1", b_m1, "per-period dataset size")->required();
  bounds->add_option("--d", b_dlist, "comma-separated shift measures d_0..d_{t_te-1}")->required();
  bounds->add_option("--l-star", b_lstar, "baseline loss L*");
  bounds->add_option("--epsilon", b_eps, "optimization slack");

  // --- ingest-check ---
  auto* ingest = app.add_subcommand("ingest-check", "parse and validate a dataset");
  std::string i_data, i_attrs, i_format = "csv";
  int i_threshold = 2;
  ingest->add_option("--data", i_data, "interaction log path")->required();
  ingest->add_option("--attrs", i_attrs, "user attribute file path")->required();
  ingest->add_option("--format", i_format, "movielens-dat|csv");
  ingest->add_option("--threshold", i_threshold, "binarization threshold");
  std::string i_codes = "FM";
  ingest->add_option("--attr-codes", i_codes, "gender letters mapping to groups 1 and 0");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      fade::ExperimentConfig cfg;
      if (*opt_config) apply_config_file(config_path, cfg);
      if (*opt_data) cfg.data_path = data_path;
      if (*opt_attrs) cfg.attrs_path = attrs_path;
      if (*opt_format) cfg.format = parse_format(format);
      if (*opt_codes) cfg.attribute_mapping = parse_attr_codes(attr_codes);
      if (*opt_synth) cfg.synthetic = parse_synthetic(synthetic_text);
      if (*opt_threshold) cfg.binarize_threshold = threshold;
      if (*opt_pf) cfg.pretrain_fraction = pretrain_frac;
      if (*opt_df) cfg.dynamic_fraction = dynamic_frac;
      if (*opt_periods) cfg.periods = periods;
      if (*opt_strategy) {
        cfg.strategies.clear();
        for (const auto& text : strategy_texts) cfg.strategies.push_back(fade::parse_strategy(text));
      }
      if (*opt_lambda) cfg.hp.lambda = lambda;
      if (*opt_tau) cfg.hp.tau = tau;
      if (*opt_mu) cfg.hp.mu = mu;
      if (*opt_neg) cfg.hp.n_neg = n_neg;
      if (*opt_dim) cfg.hp.dim = dim;
      if (*opt_lr) cfg.hp.lr = lr;
      if (*opt_l2) cfg.hp.l2 = l2;
      if (*opt_ep) cfg.hp.epochs_pretrain = epochs_pretrain;
      if (*opt_eu) cfg.hp.epochs_update = epochs_update;
      if (*opt_batch) cfg.hp.batch_size = batch;
      if (*opt_scale) cfg.hp.init_scale = init_scale;
      if (*opt_k) cfg.eval.k = k;
      if (*opt_task) cfg.eval.task = parse_task(task);
      if (*opt_en) cfg.eval.num_eval_negatives = eval_negs;
      if (*opt_seed) { cfg.hp.seed = seed; cfg.eval.seed = seed; }
      if (*opt_out) cfg.out_dir = out_dir;
      if (*opt_re) {
        for (auto& s : cfg.strategies)
          if (s.base == fade::BaseStrategy::Finetune) s.restart_every = restart_every;
      }
      return cmd_run(cfg);
    }

    if (bounds->parsed()) {
      fade::BoundInputs in;
      in.gamma = b_gamma;
      in.t_te = b_tte;
      in.delta = b_delta;
      in.l_star = b_lstar;
      in.epsilon = b_eps;
      in.d = parse_double_list(b_dlist);
      in.m.assign(static_cast<std::size_t>(std::max(b_tte, 1)), b_m1);
      if (!in.m.empty()) in.m[0] = b_m0;
      const auto ft_alpha = fade::finetune_coefficients(b_gamma, b_tte);
      const auto rt_alpha = fade::retrain_coefficients(in.m);
      ordered_json j;
      j["ft_bound"] = fade::finetune_bound(in);
      j["rt_bound"] = fade::retrain_bound(in);
      j["ft_coefficients"] = ft_alpha.alpha;
      j["rt_coefficients"] = rt_alpha.alpha;
      std::cout << j.dump(2) << '\n';
      return 0;
    }

    if (ingest->parsed()) {
      const auto log = fade::parse_interactions_files(i_data, parse_format(i_format), i_attrs,
                                                      parse_attr_codes(i_codes));
      const auto binary = fade::binarize(log, i_threshold);
      int group1_users = 0;
      for (auto a : log.user_attribute) group1_users += a;
      ordered_json j;
      j["users"] = log.user_count;
      j["items"] = log.item_count;
      j["records"] = log.records.size();
      j["kept_after_binarize"] = binary.records.size();
      j["group0_users"] = log.user_count - group1_users;
      j["group1_users"] = group1_users;
      std::cout << j.dump(2) << '\n';
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const fade::SamplingError& e) {
    std::cerr << "sampling error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
