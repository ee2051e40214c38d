#include "factorlab/factorlab.h"

#include "analysis.hpp"
#include "datagen.hpp"
#include "lab.hpp"
#include "process_json.hpp"
#include "verify.hpp"

#include <cstring>
#include <iostream>
#include <new>
#include <string>

struct flab_config {
  flab::lab::ExperimentConfig cfg;
};

struct flab_process {
  flab::ComposedProcess p;
};

namespace {

thread_local std::string g_last_error;

flab_status to_status(flab::ErrorCode c) { return static_cast<flab_status>(static_cast<int>(c)); }

template <class F>
flab_status guard(F&& f) {
  g_last_error.clear();
  try {
    f();
    return FLAB_OK;
  } catch (const flab::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return FLAB_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = e.what();
    return FLAB_IO;
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return FLAB_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return FLAB_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return FLAB_INTERNAL;
  }
}

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void need(const void* p, const char* what) {
  flab::require(p != nullptr, flab::ErrorCode::kInvalidArgument, std::string(what) + " must not be NULL");
}

flab::lab::RunOptions run_options(const flab_run_options* o) {
  flab::lab::RunOptions r;
  if (!o) return r;
  flab::require(o->threads >= 1, flab::ErrorCode::kInvalidArgument, "threads must be at least 1");
  r.threads = o->threads;
  r.deterministic = o->deterministic != 0;
  if (o->has_seed) r.seed = o->seed;
  if (o->steps > 0) r.steps = o->steps;
  if (o->output_dir) r.output_dir = o->output_dir;
  if (o->verbose) r.log = &std::cerr;
  return r;
}

}  // namespace

extern "C" {

const char* flab_version(void) { return flab::lab::code_version(); }

const char* flab_status_name(flab_status s) {
  if (s < FLAB_OK || s > FLAB_INTERNAL) return "unknown";
  return flab::error_code_name(static_cast<flab::ErrorCode>(s));
}

const char* flab_last_error(void) { return g_last_error.c_str(); }

void flab_string_free(char* s) { std::free(s); }

void flab_run_options_init(flab_run_options* opt) {
  if (!opt) return;
  *opt = flab_run_options{};
  opt->threads = 1;
}

flab_status flab_preset_names(char** out) {
  return guard([&] {
    need(out, "out");
    std::string s;
    for (const auto& n : flab::lab::preset_names()) s += n + "\n";
    *out = dup(s);
  });
}

flab_status flab_config_from_preset(const char* name, flab_config** out) {
  return guard([&] {
    need(name, "name");
    need(out, "out");
    *out = new flab_config{flab::lab::preset(name)};
  });
}

flab_status flab_config_load(const char* path, flab_config** out) {
  return guard([&] {
    need(path, "path");
    need(out, "out");
    *out = new flab_config{flab::lab::load_config(path)};
  });
}

flab_status flab_config_parse(const char* json, flab_config** out) {
  return guard([&] {
    need(json, "json");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json, nullptr, true, true);
    } catch (const nlohmann::json::exception& e) {
      flab::fail(flab::ErrorCode::kConfig, std::string("config is not valid JSON: ") + e.what());
    }
    *out = new flab_config{flab::lab::config_from_json(j)};
  });
}

flab_status flab_config_to_json(const flab_config* cfg, char** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup(flab::lab::config_to_json(cfg->cfg).dump(2));
  });
}

flab_status flab_config_resolve(const flab_config* cfg, const flab_run_options* opt, char** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup(flab::lab::config_to_json(flab::lab::resolve(cfg->cfg, run_options(opt))).dump(2));
  });
}

void flab_config_free(flab_config* cfg) { delete cfg; }

flab_status flab_generate(const flab_config* cfg, const flab_run_options* opt, int n_seqs, int joint, char** out_dir) {
  return guard([&] {
    need(cfg, "cfg");
    flab::require(n_seqs > 0, flab::ErrorCode::kInvalidArgument, "n_seqs must be positive");
    const auto ro = run_options(opt);
    const auto resolved = flab::lab::resolve(cfg->cfg, ro);
    const auto dir = flab::lab::output_root(resolved);
    flab::lab::generate(resolved, dir, n_seqs, joint != 0, ro);
    if (out_dir) *out_dir = dup(dir.string());
  });
}

flab_status flab_train(const flab_config* cfg, const flab_run_options* opt, char** out_dir) {
  return guard([&] {
    need(cfg, "cfg");
    const auto root = flab::lab::train_experiment(cfg->cfg, run_options(opt));
    if (out_dir) *out_dir = dup(root.string());
  });
}

flab_status flab_analyze(const char* run_dir, const flab_run_options* opt) {
  return guard([&] {
    need(run_dir, "run_dir");
    flab::lab::analyze_experiment(run_dir, run_options(opt));
  });
}

flab_status flab_run(const flab_config* cfg, const flab_run_options* opt, char** out_dir) {
  return guard([&] {
    need(cfg, "cfg");
    const auto root = flab::lab::run_experiment(cfg->cfg, run_options(opt));
    if (out_dir) *out_dir = dup(root.string());
  });
}

flab_status flab_report(const char* run_dir) {
  return guard([&] {
    need(run_dir, "run_dir");
    flab::lab::report(run_dir);
  });
}

flab_status flab_summary(const char* run_dir, char** out_json) {
  return guard([&] {
    need(run_dir, "run_dir");
    need(out_json, "out_json");
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& dir : flab::lab::run_units(run_dir)) {
      const auto s = flab::lab::summarize_unit(dir);
      arr.push_back({{"dir", dir.string()},
                     {"epsilon", s.epsilon},
                     {"seed", s.seed},
                     {"final_step", s.final_step},
                     {"final_loss", s.final_loss},
                     {"kstar", s.kstar},
                     {"kstar_factored", s.kstar_factored},
                     {"kstar_joint", s.kstar_joint},
                     {"r2", s.r2},
                     {"r2_total", s.r2_total},
                     {"overlap_init", s.has_overlap ? nlohmann::json(s.overlap_init) : nlohmann::json()},
                     {"overlap_final", s.has_overlap ? nlohmann::json(s.overlap_final) : nlohmann::json()}});
    }
    *out_json = dup(arr.dump(2));
  });
}

void flab_verify_options_init(flab_verify_options* opt) {
  if (!opt) return;
  *opt = flab_verify_options{};
  opt->threads = 1;
}

flab_status flab_verify(const char* group, const flab_verify_options* opt, flab_line_callback on_line, void* user,
                        char** out_json, int* all_pass) {
  return guard([&] {
    need(group, "group");
    const auto ids = flab::verify::criteria_for(group);
    flab::verify::VerifyOptions vo;
    if (opt) {
      flab::require(opt->threads >= 1, flab::ErrorCode::kInvalidArgument, "threads must be at least 1");
      vo.threads = opt->threads;
      vo.deterministic = opt->deterministic != 0;
      if (opt->work_dir && *opt->work_dir) vo.work_dir = opt->work_dir;
      if (opt->steps > 0) vo.steps = opt->steps;
      if (opt->n_seeds > 0) {
        need(opt->seeds, "seeds");
        vo.seeds.assign(opt->seeds, opt->seeds + opt->n_seeds);
      }
      if (opt->verbose) vo.log = &std::cerr;
    }
    const auto res = flab::verify::run_checks(ids, vo, [&](const flab::verify::CheckResult& r) {
      if (on_line) on_line(flab::verify::format_line(r).c_str(), user);
    });
    auto j = flab::verify::to_json(res);
    j["group"] = group;
    if (out_json) *out_json = dup(j.dump(2));
    if (all_pass) *all_pass = j["all_pass"].get<bool>() ? 1 : 0;
  });
}

flab_status flab_process_parse(const char* json, flab_process** out) {
  return guard([&] {
    need(json, "json");
    need(out, "out");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
      flab::fail(flab::ErrorCode::kConfig, std::string("process is not valid JSON: ") + e.what());
    }
    *out = new flab_process{flab::ComposedProcess(flab::process_from_json(j))};
  });
}

flab_status flab_process_from_config(const flab_config* cfg, flab_process** out) {
  return guard([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = new flab_process{flab::ComposedProcess(cfg->cfg.process)};
  });
}

flab_status flab_process_info(const flab_process* p, int* n_tokens, int* n_factors, int* joint_dim, int* fwh_dim) {
  return guard([&] {
    need(p, "process");
    if (n_tokens) *n_tokens = p->p.codec().n_tokens();
    if (n_factors) *n_factors = p->p.n_factors();
    if (joint_dim) *joint_dim = p->p.joint_dim();
    if (fwh_dim) *fwh_dim = p->p.fwh_dim();
  });
}

flab_status flab_process_sequence_probability(const flab_process* p, const int32_t* tokens, size_t n, double* out) {
  return guard([&] {
    need(p, "process");
    need(out, "out");
    if (n > 0) need(tokens, "tokens");
    std::vector<int> seq(tokens, tokens + n);
    for (int x : seq)
      flab::require(x >= 0 && x < p->p.codec().n_tokens(), flab::ErrorCode::kOutOfRange,
                    "token " + std::to_string(x) + " outside the alphabet");
    *out = p->p.sequence_probability(seq);
  });
}

flab_status flab_process_sample(const flab_process* p, int n_seqs, int length, uint64_t seed, int bos, int threads,
                                int32_t* out, size_t out_len) {
  return guard([&] {
    need(p, "process");
    need(out, "out");
    flab::require(n_seqs > 0 && length > 0, flab::ErrorCode::kInvalidArgument, "n_seqs and length must be positive");
    const std::size_t want = static_cast<std::size_t>(n_seqs) * static_cast<std::size_t>(length + (bos ? 1 : 0));
    flab::require(out_len >= want, flab::ErrorCode::kShapeMismatch,
                  "output buffer holds " + std::to_string(out_len) + " tokens, need " + std::to_string(want));
    const auto b = flab::sample_sequences(p->p, n_seqs, length, seed, bos != 0, std::max(1, threads));
    std::copy(b.tokens.begin(), b.tokens.end(), out);
  });
}

void flab_process_free(flab_process* p) { delete p; }

flab_status flab_effective_dim(const double* data, size_t rows, size_t cols, double p, int* out) {
  return guard([&] {
    need(data, "data");
    need(out, "out");
    flab::require(rows >= 2 && cols >= 1, flab::ErrorCode::kShapeMismatch, "need at least 2 rows and 1 column");
    flab::require(p > 0 && p <= 1, flab::ErrorCode::kInvalidArgument, "p must lie in (0, 1]");
    const Eigen::Map<const flab::Mat> m(data, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    *out = flab::effective_dim(flab::pca_spectrum(m), p);
  });
}

}  // extern "C"
