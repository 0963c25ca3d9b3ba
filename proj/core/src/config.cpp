#include "dpg/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dpg/errors.hpp"

namespace dpg::harness {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (allowed.count(key) == 0) {
      throw ConfigError("config: unknown key '" + where + key + "'");
    }
  }
}

template <typename T>
T get_as(const json& j, const std::string& key, const std::string& where, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: bad value type for '" + where + key + "'");
  }
}

client::EndpointConfig parse_endpoint(const json& j, const std::string& where) {
  reject_unknown_keys(
      j, {"base_url", "model", "api_key_env", "timeout_s", "max_retries", "max_in_flight"},
      where);
  client::EndpointConfig e;
  e.base_url = get_as<std::string>(j, "base_url", where, "");
  e.model = get_as<std::string>(j, "model", where, "");
  e.api_key_env = get_as<std::string>(j, "api_key_env", where, "");
  e.timeout_s = get_as<int>(j, "timeout_s", where, e.timeout_s);
  e.max_retries = get_as<int>(j, "max_retries", where, e.max_retries);
  e.max_in_flight = get_as<int>(j, "max_in_flight", where, e.max_in_flight);
  return e;
}

json endpoint_to_json(const client::EndpointConfig& e) {
  return {{"base_url", e.base_url},   {"model", e.model},
          {"api_key_env", e.api_key_env},  // the NAME of the variable, never the value
          {"timeout_s", e.timeout_s}, {"max_retries", e.max_retries},
          {"max_in_flight", e.max_in_flight}};
}

}  // namespace

AppConfig AppConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_text(buf.str());
}

AppConfig AppConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  reject_unknown_keys(j,
                      {"endpoints", "cache", "sampling", "templates", "strategies_file",
                       "training", "scorer", "run"},
                      "");

  AppConfig cfg;

  if (j.contains("endpoints")) {
    const json& ep = j.at("endpoints");
    reject_unknown_keys(ep, {"response", "derive", "judge"}, "endpoints.");
    if (ep.contains("response")) {
      cfg.response = parse_endpoint(ep.at("response"), "endpoints.response.");
    }
    if (ep.contains("derive")) {
      cfg.derive = parse_endpoint(ep.at("derive"), "endpoints.derive.");
    }
    if (ep.contains("judge")) {
      cfg.judge = parse_endpoint(ep.at("judge"), "endpoints.judge.");
    }
  }

  if (j.contains("cache")) {
    const json& c = j.at("cache");
    reject_unknown_keys(c, {"dir", "enabled"}, "cache.");
    cfg.cache.dir = get_as<std::string>(c, "dir", "cache.", cfg.cache.dir);
    cfg.cache.enabled = get_as<bool>(c, "enabled", "cache.", cfg.cache.enabled);
    if (cfg.cache.enabled && cfg.cache.dir.empty()) {
      throw ConfigError("config: cache.dir must not be empty while caching is enabled");
    }
  }

  if (j.contains("sampling")) {
    const json& s = j.at("sampling");
    reject_unknown_keys(s, {"temperature", "top_p", "max_tokens", "seed"}, "sampling.");
    cfg.sampling.temperature =
        get_as<double>(s, "temperature", "sampling.", cfg.sampling.temperature);
    cfg.sampling.top_p = get_as<double>(s, "top_p", "sampling.", cfg.sampling.top_p);
    cfg.sampling.max_tokens = get_as<int>(s, "max_tokens", "sampling.", cfg.sampling.max_tokens);
    if (s.contains("seed")) {
      cfg.sampling.seed = get_as<std::int64_t>(s, "seed", "sampling.", 0);
    }
    if (cfg.sampling.temperature < 0.0 || cfg.sampling.top_p <= 0.0 ||
        cfg.sampling.top_p > 1.0 || cfg.sampling.max_tokens < 1) {
      throw ConfigError("config: invalid sampling parameters");
    }
  }

  if (j.contains("templates")) {
    const json& t = j.at("templates");
    reject_unknown_keys(t, {"derivation_instruction_file", "icl_template_file"}, "templates.");
    cfg.templates.derivation_instruction_file =
        get_as<std::string>(t, "derivation_instruction_file", "templates.", "");
    cfg.templates.icl_template_file =
        get_as<std::string>(t, "icl_template_file", "templates.", "");
  }

  cfg.strategies_file = get_as<std::string>(j, "strategies_file", "", "");

  if (j.contains("training")) {
    const json& t = j.at("training");
    reject_unknown_keys(t, {"beta", "learning_rate", "steps", "epochs", "seed", "decay"},
                        "training.");
    cfg.training.beta = get_as<double>(t, "beta", "training.", cfg.training.beta);
    cfg.training.learning_rate =
        get_as<double>(t, "learning_rate", "training.", cfg.training.learning_rate);
    cfg.training.steps = get_as<int>(t, "steps", "training.", cfg.training.steps);
    cfg.training.epochs = get_as<int>(t, "epochs", "training.", cfg.training.epochs);
    cfg.training.seed = get_as<std::uint64_t>(t, "seed", "training.", cfg.training.seed);
    const std::string decay = get_as<std::string>(t, "decay", "training.", "linear");
    if (decay == "linear") {
      cfg.training.decay = train::Decay::Linear;
    } else if (decay == "none") {
      cfg.training.decay = train::Decay::None;
    } else {
      throw ConfigError("config: training.decay must be 'linear' or 'none'");
    }
  }

  if (j.contains("scorer")) {
    const json& s = j.at("scorer");
    reject_unknown_keys(s, {"kind", "weights", "endpoint"}, "scorer.");
    const std::string kind = get_as<std::string>(s, "kind", "scorer.", "heuristic");
    if (kind == "heuristic") {
      cfg.scorer.kind = reward::ScorerKind::Heuristic;
    } else if (kind == "remote") {
      cfg.scorer.kind = reward::ScorerKind::Remote;
    } else {
      throw ConfigError("config: scorer.kind must be 'heuristic' or 'remote'");
    }
    if (s.contains("weights")) {
      const json& w = s.at("weights");
      reject_unknown_keys(w, {"length", "keyword", "echo_penalty"}, "scorer.weights.");
      cfg.scorer.weights.length_w =
          get_as<double>(w, "length", "scorer.weights.", cfg.scorer.weights.length_w);
      cfg.scorer.weights.keyword_w =
          get_as<double>(w, "keyword", "scorer.weights.", cfg.scorer.weights.keyword_w);
      cfg.scorer.weights.echo_penalty_w = get_as<double>(w, "echo_penalty", "scorer.weights.",
                                                         cfg.scorer.weights.echo_penalty_w);
    }
    if (s.contains("endpoint")) {
      cfg.scorer.endpoint = parse_endpoint(s.at("endpoint"), "scorer.endpoint.");
    }
    if (cfg.scorer.kind == reward::ScorerKind::Remote && !cfg.scorer.endpoint) {
      throw ConfigError("config: scorer.kind 'remote' requires scorer.endpoint");
    }
  }

  if (j.contains("run")) {
    const json& r = j.at("run");
    reject_unknown_keys(r, {"dir", "workers", "skip_on_error"}, "run.");
    cfg.run.dir = get_as<std::string>(r, "dir", "run.", cfg.run.dir);
    cfg.run.workers = get_as<int>(r, "workers", "run.", cfg.run.workers);
    cfg.run.skip_on_error = get_as<bool>(r, "skip_on_error", "run.", cfg.run.skip_on_error);
    if (cfg.run.workers < 1) throw ConfigError("config: run.workers must be >= 1");
    if (cfg.run.dir.empty()) throw ConfigError("config: run.dir must not be empty");
  }

  return cfg;
}

std::string AppConfig::snapshot_json() const {
  json j;
  json ep;
  ep["response"] = endpoint_to_json(response);
  if (derive) ep["derive"] = endpoint_to_json(*derive);
  if (judge) ep["judge"] = endpoint_to_json(*judge);
  j["endpoints"] = ep;
  j["cache"] = {{"dir", cache.dir}, {"enabled", cache.enabled}};
  json sampling_j = {{"temperature", sampling.temperature},
                     {"top_p", sampling.top_p},
                     {"max_tokens", sampling.max_tokens}};
  if (sampling.seed) sampling_j["seed"] = *sampling.seed;
  j["sampling"] = sampling_j;
  j["templates"] = {{"derivation_instruction_file", templates.derivation_instruction_file},
                    {"icl_template_file", templates.icl_template_file}};
  j["strategies_file"] = strategies_file;
  j["training"] = {{"beta", training.beta},
                   {"learning_rate", training.learning_rate},
                   {"steps", training.steps},
                   {"epochs", training.epochs},
                   {"seed", training.seed},
                   {"decay", training.decay == train::Decay::Linear ? "linear" : "none"}};
  json scorer_j;
  scorer_j["kind"] = scorer.kind == reward::ScorerKind::Heuristic ? "heuristic" : "remote";
  scorer_j["weights"] = {{"length", scorer.weights.length_w},
                         {"keyword", scorer.weights.keyword_w},
                         {"echo_penalty", scorer.weights.echo_penalty_w}};
  if (scorer.endpoint) scorer_j["endpoint"] = endpoint_to_json(*scorer.endpoint);
  j["scorer"] = scorer_j;
  j["run"] = {{"dir", run.dir}, {"workers", run.workers}, {"skip_on_error", run.skip_on_error}};
  return j.dump();
}

}  // namespace dpg::harness
