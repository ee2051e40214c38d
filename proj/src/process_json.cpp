#include "process_json.hpp"

#include <openssl/evp.h>

#include <array>
#include <cstdio>

namespace flab {

namespace {

double number_at(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) fail(ErrorCode::kConfig, path + "." + key + ": missing");
  if (!j.at(key).is_number()) fail(ErrorCode::kConfig, path + "." + key + ": expected a number");
  return j.at(key).get<double>();
}

}  // namespace

nlohmann::json factor_to_json(const FactorSpec& f) {
  switch (f.kind) {
    case ProcessKind::kMess3: return {{"kind", "mess3"}, {"alpha", f.mess3.alpha}, {"x", f.mess3.x}};
    case ProcessKind::kBlochWalk: return {{"kind", "bloch_walk"}, {"alpha", f.bloch.alpha}, {"beta", f.bloch.beta}};
    case ProcessKind::kSns: return {{"kind", "sns"}, {"p", f.sns.p}, {"q", f.sns.q}};
  }
  return {};
}

FactorSpec factor_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    fail(ErrorCode::kConfig, path + ".kind: missing or not a string");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "mess3") return FactorSpec::mess3_of(number_at(j, "alpha", path), number_at(j, "x", path));
  if (kind == "bloch_walk") return FactorSpec::bloch_of(number_at(j, "alpha", path), number_at(j, "beta", path));
  if (kind == "sns") return FactorSpec::sns_of(number_at(j, "p", path), number_at(j, "q", path));
  fail(ErrorCode::kConfig, path + ".kind: unknown process kind '" + kind + "'");
}

nlohmann::json process_to_json(const ComposedSpec& spec) {
  nlohmann::json factors = nlohmann::json::array();
  for (const auto& f : spec.factors) {
    if (spec.regime == Regime::kChain) {
      nlohmann::json vs = nlohmann::json::array();
      for (const auto& v : f.variant_specs) vs.push_back(factor_to_json(v));
      factors.push_back({{"variants", vs}});
    } else {
      factors.push_back(factor_to_json(f.variant_specs.front()));
    }
  }
  return {{"regime", regime_name(spec.regime)}, {"epsilon", spec.epsilon}, {"factors", factors}};
}

ComposedSpec process_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) fail(ErrorCode::kConfig, path + ": expected an object");
  ComposedSpec spec;
  const std::string regime = j.value("regime", std::string("independent"));
  if (regime == "independent") {
    spec.regime = Regime::kIndependent;
  } else if (regime == "chain") {
    spec.regime = Regime::kChain;
  } else if (regime == "noisy") {
    spec.regime = Regime::kNoisy;
  } else {
    fail(ErrorCode::kConfig, path + ".regime: unknown regime '" + regime + "'");
  }
  if (j.contains("epsilon")) spec.epsilon = number_at(j, "epsilon", path);
  if (!j.contains("factors") || !j.at("factors").is_array() || j.at("factors").empty()) {
    fail(ErrorCode::kConfig, path + ".factors: expected a nonempty array");
  }
  const auto& fs = j.at("factors");
  for (std::size_t n = 0; n < fs.size(); ++n) {
    const std::string fpath = path + ".factors[" + std::to_string(n) + "]";
    ChainedFactor cf;
    if (fs[n].contains("variants")) {
      const auto& vs = fs[n].at("variants");
      if (!vs.is_array() || vs.empty()) fail(ErrorCode::kConfig, fpath + ".variants: expected a nonempty array");
      for (std::size_t v = 0; v < vs.size(); ++v) {
        cf.variant_specs.push_back(factor_from_json(vs[v], fpath + ".variants[" + std::to_string(v) + "]"));
      }
    } else {
      cf.variant_specs.push_back(factor_from_json(fs[n], fpath));
    }
    spec.factors.push_back(std::move(cf));
  }
  return spec;
}

std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  require(EVP_Digest(bytes.data(), bytes.size(), digest.data(), &len, EVP_sha256(), nullptr) == 1,
          ErrorCode::kInternal, "sha256 failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

std::string process_fingerprint(const ComposedSpec& spec) {
  return sha256_hex(process_to_json(spec).dump()).substr(0, 16);
}

}  // namespace flab
