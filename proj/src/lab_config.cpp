#include "lab.hpp"

#include "process_json.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace flab::lab {

using nlohmann::json;

namespace {

// Walks one JSON object, remembering which keys were consumed so leftovers can
// be reported with their full path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    require(j.is_object(), ErrorCode::kConfig, path_ + ": expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  std::string at(const std::string& key) const { return path_ + "." + key; }

  const json* take(const std::string& key) {
    seen_.insert(key);
    const auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void opt(const std::string& key, int& out) {
    if (const json* v = take(key)) {
      require(v->is_number_integer(), ErrorCode::kConfig, at(key) + ": expected an integer");
      out = v->get<int>();
    }
  }
  void opt(const std::string& key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      require(v->is_number_unsigned() || (v->is_number_integer() && v->get<long long>() >= 0), ErrorCode::kConfig,
              at(key) + ": expected a non-negative integer");
      out = v->get<std::uint64_t>();
    }
  }
  void opt(const std::string& key, double& out) {
    if (const json* v = take(key)) {
      require(v->is_number(), ErrorCode::kConfig, at(key) + ": expected a number");
      out = v->get<double>();
    }
  }
  void opt(const std::string& key, bool& out) {
    if (const json* v = take(key)) {
      require(v->is_boolean(), ErrorCode::kConfig, at(key) + ": expected true or false");
      out = v->get<bool>();
    }
  }
  void opt(const std::string& key, std::string& out) {
    if (const json* v = take(key)) {
      require(v->is_string(), ErrorCode::kConfig, at(key) + ": expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename T>
  void opt_list(const std::string& key, std::vector<T>& out) {
    if (const json* v = take(key)) {
      require(v->is_array(), ErrorCode::kConfig, at(key) + ": expected a list");
      out.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        const json& e = (*v)[i];
        const std::string p = at(key) + "[" + std::to_string(i) + "]";
        if constexpr (std::is_same_v<T, double>) {
          require(e.is_number(), ErrorCode::kConfig, p + ": expected a number");
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
          require(e.is_number_unsigned() || (e.is_number_integer() && e.get<long long>() >= 0), ErrorCode::kConfig,
                  p + ": expected a non-negative integer");
        } else {
          require(e.is_number_integer(), ErrorCode::kConfig, p + ": expected an integer");
        }
        out.push_back(e.get<T>());
      }
    }
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      require(seen_.count(item.key()) > 0, ErrorCode::kConfig, at(item.key()) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string fmt_eps(double e) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", e);
  return buf;
}

ExperimentConfig base_preset(const std::string& name, ComposedSpec process) {
  ExperimentConfig c;
  c.name = name;
  c.process = std::move(process);
  c.model.arch = nn::Arch::kTransformer;
  c.model.n_layers = 4;
  c.model.n_heads = 3;
  c.model.d_model = 120;
  c.model.vocab = 0;
  c.model.context = 0;
  c.train.batch = 1024;
  c.train.lr = 5e-4;
  c.train.seq_len = 8;
  return c;
}

}  // namespace

json config_to_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["process"] = process_to_json(c.process);
  if (!c.epsilons.empty()) j["epsilons"] = c.epsilons;
  j["model"] = {{"arch", nn::arch_name(c.model.arch)},
                {"n_layers", c.model.n_layers},
                {"n_heads", c.model.n_heads},
                {"d_model", c.model.d_model}};
  if (c.model.vocab > 0) j["model"]["vocab"] = c.model.vocab;
  if (c.model.context > 0) j["model"]["context"] = c.model.context;
  j["train"] = {{"lr", c.train.lr},         {"beta1", c.train.beta1},
                {"beta2", c.train.beta2},   {"adam_eps", c.train.adam_eps},
                {"weight_decay", c.train.weight_decay}, {"batch", c.train.batch},
                {"steps", c.train.steps},   {"seq_len", c.train.seq_len},
                {"n_checkpoints", c.train.n_checkpoints}};
  if (!c.train.checkpoints.empty()) j["train"]["checkpoints"] = c.train.checkpoints;
  const auto& a = c.analysis;
  j["analysis"] = {{"eval_seqs", a.eval_seqs},     {"eval_seed", a.eval_seed},
                   {"subspaces", a.subspaces},     {"vary_groups", a.vary_groups},
                   {"vary_variants", a.vary_variants}, {"overlap_k", a.overlap_k},
                   {"cev_p", a.cev_p},             {"folds", a.folds},
                   {"rcond_grid", a.rcond_grid},   {"attribution", a.attribution},
                   {"joint_reference", a.joint_reference}};
  j["seeds"] = c.seeds;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  c.model.vocab = 0;
  c.model.context = 0;
  Fields top(j, "config");
  top.opt("name", c.name);
  const json* proc = top.take("process");
  require(proc != nullptr, ErrorCode::kConfig, "config.process: required");
  c.process = process_from_json(*proc, "config.process");
  top.opt_list("epsilons", c.epsilons);
  top.opt_list("seeds", c.seeds);
  top.opt("output_dir", c.output_dir);

  if (const json* m = top.take("model")) {
    Fields f(*m, "config.model");
    std::string arch = nn::arch_name(c.model.arch);
    f.opt("arch", arch);
    try {
      c.model.arch = nn::arch_from_name(arch);
    } catch (const Error& e) {
      fail(ErrorCode::kConfig, "config.model.arch: " + std::string(e.what()));
    }
    f.opt("n_layers", c.model.n_layers);
    f.opt("n_heads", c.model.n_heads);
    f.opt("d_model", c.model.d_model);
    f.opt("vocab", c.model.vocab);
    f.opt("context", c.model.context);
    f.finish();
  }
  if (const json* t = top.take("train")) {
    Fields f(*t, "config.train");
    f.opt("lr", c.train.lr);
    f.opt("beta1", c.train.beta1);
    f.opt("beta2", c.train.beta2);
    f.opt("adam_eps", c.train.adam_eps);
    f.opt("weight_decay", c.train.weight_decay);
    f.opt("batch", c.train.batch);
    f.opt("steps", c.train.steps);
    f.opt("seq_len", c.train.seq_len);
    f.opt("n_checkpoints", c.train.n_checkpoints);
    f.opt_list("checkpoints", c.train.checkpoints);
    f.finish();
  }
  if (const json* a = top.take("analysis")) {
    Fields f(*a, "config.analysis");
    auto& an = c.analysis;
    f.opt("eval_seqs", an.eval_seqs);
    f.opt("eval_seed", an.eval_seed);
    f.opt("subspaces", an.subspaces);
    f.opt("vary_groups", an.vary_groups);
    f.opt("vary_variants", an.vary_variants);
    f.opt("overlap_k", an.overlap_k);
    f.opt("cev_p", an.cev_p);
    f.opt("folds", an.folds);
    f.opt_list("rcond_grid", an.rcond_grid);
    f.opt("attribution", an.attribution);
    f.opt("joint_reference", an.joint_reference);
    f.finish();
  }
  top.finish();
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::kIo, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

std::vector<std::string> preset_names() {
  return {"independent-desk", "chain-desk", "noisy-grid", "train-smoke", "independent-full"};
}

ExperimentConfig preset(const std::string& name) {
  if (name == "independent-desk" || name == "independent") {
    auto c = base_preset("independent-desk", independent_product(reference_independent_factors()).spec());
    c.train.steps = 20000;
    return c;
  }
  if (name == "chain-desk" || name == "chain") {
    auto c = base_preset("chain-desk", conditional_chain(reference_chain_factors()).spec());
    c.train.steps = 20000;
    return c;
  }
  if (name == "noisy-grid") {
    auto c = base_preset("noisy-grid", independent_product(reference_independent_factors()).spec());
    c.epsilons = {0, 0.001, 0.01, 0.05, 0.1, 0.2, 0.3, 0.5};
    c.train.steps = 10000;
    return c;
  }
  if (name == "train-smoke") {
    const auto m = FactorSpec::mess3_of(0.6, 0.15);
    auto c = base_preset("train-smoke", independent_product({m, m}).spec());
    c.model.n_layers = 2;
    c.model.d_model = 48;
    c.train.steps = 10000;
    c.analysis.eval_seqs = 2000;
    c.analysis.vary_groups = 64;
    c.analysis.vary_variants = 64;
    c.seeds = {0, 1, 2};
    return c;
  }
  if (name == "independent-full") {
    auto c = base_preset("independent-full", independent_product(reference_independent_factors()).spec());
    c.train.batch = 25000;
    c.train.steps = 500000;
    return c;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  fail(ErrorCode::kConfig, "unknown preset '" + name + "' (known: " + known + ")");
}

ExperimentConfig resolve(ExperimentConfig cfg, const RunOptions& opt) {
  if (opt.seed) cfg.seeds = {*opt.seed};
  if (opt.steps) cfg.train.steps = *opt.steps;
  if (!opt.output_dir.empty()) cfg.output_dir = opt.output_dir;
  cfg.train.threads = std::max(1, opt.threads);
  cfg.train.deterministic = opt.deterministic;

  const ComposedProcess p(cfg.process);
  const bool bos = nn::uses_bos(cfg.model.arch);
  const int vocab = bos ? p.codec().vocab_with_bos() : p.codec().n_tokens();
  const int context = cfg.train.seq_len + (bos ? 1 : 0);
  require(cfg.model.vocab <= 0 || cfg.model.vocab == vocab, ErrorCode::kConfig,
          "config.model.vocab: " + std::to_string(cfg.model.vocab) + " does not match the process (" +
              std::to_string(vocab) + (bos ? " including BOS)" : ")"));
  require(cfg.model.context <= 0 || cfg.model.context == context, ErrorCode::kConfig,
          "config.model.context: " + std::to_string(cfg.model.context) + " does not match train.seq_len (" +
              std::to_string(context) + ")");
  cfg.model.vocab = vocab;
  cfg.model.context = context;
  try {
    cfg.model.validate();
    cfg.train.validate();
  } catch (const Error& e) {
    fail(ErrorCode::kConfig, std::string("config: ") + e.what());
  }
  require(!cfg.seeds.empty(), ErrorCode::kConfig, "config.seeds: at least one seed required");
  for (double e : cfg.epsilons) {
    require(e >= 0.0 && e <= 1.0, ErrorCode::kConfig, "config.epsilons: values must lie in [0, 1]");
  }
  require(cfg.epsilons.empty() || cfg.process.regime == Regime::kIndependent, ErrorCode::kConfig,
          "config.epsilons: a noise sweep needs an independent base process");
  const auto& a = cfg.analysis;
  static const std::set<std::string> methods{"auto", "vary-one", "regression", "none"};
  require(methods.count(a.subspaces) > 0, ErrorCode::kConfig,
          "config.analysis.subspaces: expected auto, vary-one, regression or none");
  require(a.subspaces != "vary-one" || (cfg.process.regime == Regime::kIndependent && cfg.epsilons.empty()),
          ErrorCode::kConfig, "config.analysis.subspaces: vary-one needs independent factors");
  require(a.eval_seqs >= 1 && static_cast<long long>(a.eval_seqs) * cfg.train.seq_len > a.folds, ErrorCode::kConfig,
          "config.analysis.eval_seqs: need more evaluation rows than folds");
  require(a.folds >= 2, ErrorCode::kConfig, "config.analysis.folds: must be >= 2");
  require(a.vary_groups >= 1 && a.vary_variants >= 2, ErrorCode::kConfig,
          "config.analysis: vary_groups >= 1 and vary_variants >= 2 required");
  require(a.overlap_k >= 1 && a.overlap_k <= cfg.model.d_model, ErrorCode::kConfig,
          "config.analysis.overlap_k: must lie in [1, d_model]");
  require(a.cev_p > 0.0 && a.cev_p <= 1.0, ErrorCode::kConfig, "config.analysis.cev_p: must lie in (0, 1]");
  require(!a.rcond_grid.empty(), ErrorCode::kConfig, "config.analysis.rcond_grid: empty");
  return cfg;
}

fs::path output_root(const ExperimentConfig& cfg) {
  return cfg.output_dir.empty() ? fs::path("runs") / cfg.name : fs::path(cfg.output_dir);
}

std::vector<RunUnit> expand_units(const ExperimentConfig& cfg) {
  const fs::path root = output_root(cfg);
  std::vector<std::optional<double>> eps;
  if (cfg.epsilons.empty()) {
    eps.push_back(std::nullopt);
  } else {
    for (double e : cfg.epsilons) eps.emplace_back(e);
  }
  std::vector<RunUnit> units;
  for (const auto& e : eps) {
    for (std::uint64_t seed : cfg.seeds) {
      RunUnit u;
      u.cfg = cfg;
      u.cfg.epsilons.clear();
      u.cfg.seeds = {seed};
      u.cfg.model.seed = seed;
      u.cfg.train.seed = seed;
      u.dir = root;
      if (e) {
        u.cfg.process.regime = Regime::kNoisy;
        u.cfg.process.epsilon = *e;
        u.label = "eps-" + fmt_eps(*e);
        u.dir /= u.label;
      }
      if (cfg.seeds.size() > 1) {
        const std::string s = "seed-" + std::to_string(seed);
        u.label += (u.label.empty() ? "" : "/") + s;
        u.dir /= s;
      }
      if (u.label.empty()) u.label = cfg.name;
      u.cfg.output_dir = u.dir.string();
      units.push_back(std::move(u));
    }
  }
  return units;
}

}  // namespace flab::lab
