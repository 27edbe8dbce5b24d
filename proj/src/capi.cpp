#include "packetclip.h"

#include <cstdlib>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include "packetclip/kvconfig.hpp"

#include "packetclip/contrastive.hpp"
#include "packetclip/embed.hpp"
#include "packetclip/error.hpp"
#include "packetclip/kg.hpp"
#include "packetclip/pipeline.hpp"
#include "packetclip/reason.hpp"

using namespace packetclip;

namespace {

constexpr const char* kVersion = "0.1.0";

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

pc_status status_of(Err code) {
  switch (code) {
    case Err::io: return PC_ERR_IO;
    case Err::unsupported_format: return PC_ERR_UNSUPPORTED_FORMAT;
    case Err::corrupt_capture: return PC_ERR_CORRUPT_CAPTURE;
    case Err::schema: return PC_ERR_SCHEMA;
    case Err::row: return PC_ERR_ROW;
    case Err::template_error: return PC_ERR_TEMPLATE;
    case Err::provider: return PC_ERR_PROVIDER;
    case Err::config: return PC_ERR_CONFIG;
    case Err::shape: return PC_ERR_SHAPE;
    case Err::graph: return PC_ERR_GRAPH;
    case Err::metric: return PC_ERR_METRIC;
    case Err::state: return PC_ERR_STATE;
    case Err::numeric: return PC_ERR_NUMERIC;
  }
  return PC_ERR_UNKNOWN;
}

template <class Fn>
pc_status guarded(char** err, Fn&& fn) {
  if (err) *err = nullptr;
  try {
    fn();
    return PC_OK;
  } catch (const Error& e) {
    if (err) *err = dup_string(std::string(err_name(e.code())) + ": " + e.what());
    return status_of(e.code());
  } catch (const std::exception& e) {
    if (err) *err = dup_string(e.what());
    return PC_ERR_UNKNOWN;
  } catch (...) {
    if (err) *err = dup_string("unknown error");
    return PC_ERR_UNKNOWN;
  }
}

}  // namespace

struct pc_config_t {
  pipeline::PipelineConfig cfg;
};

struct pc_scorer_t {
  reason::ReasonModel model;
  contrastive::Heads heads;
  std::vector<reason::MissionContext> contexts;
  std::unique_ptr<embed::BaseEncoder> text_enc;
  std::unique_ptr<embed::BaseEncoder> packet_enc;
  std::unique_ptr<reason::Engine> engine;
  std::deque<Mat> history;  // most recent frame tokens, newest last
};

extern "C" {

const char* pc_version(void) { return kVersion; }

void pc_string_free(char* s) { std::free(s); }

pc_status pc_config_open(const char* path, pc_config_t** out, char** err) {
  return guarded(err, [&] {
    if (!path || !out) fail(Err::config, "null argument");
    auto cfg = std::make_unique<pc_config_t>();
    cfg->cfg = pipeline::PipelineConfig::from_file(path);
    *out = cfg.release();
  });
}

pc_status pc_config_parse(const char* text, pc_config_t** out, char** err) {
  return guarded(err, [&] {
    if (!text || !out) fail(Err::config, "null argument");
    auto cfg = std::make_unique<pc_config_t>();
    cfg->cfg = pipeline::PipelineConfig::from_text(text);
    *out = cfg.release();
  });
}

void pc_config_close(pc_config_t* cfg) { delete cfg; }

pc_status pc_config_set(pc_config_t* cfg, const char* key, const char* value, char** err) {
  return guarded(err, [&] {
    if (!cfg || !key || !value) fail(Err::config, "null argument");
    cfg->cfg.raw.set(key, value);
  });
}

pc_status pc_config_get(const pc_config_t* cfg, const char* key, char** value_out, char** err) {
  return guarded(err, [&] {
    if (!cfg || !key || !value_out) fail(Err::config, "null argument");
    *value_out = dup_string(cfg->cfg.raw.get(key, ""));
  });
}

pc_status pc_run_stage(const pc_config_t* cfg, const char* stage, const char* out_dir,
                       char** err) {
  return guarded(err, [&] {
    if (!cfg || !stage || !out_dir) fail(Err::config, "null argument");
    pipeline::Pipeline p(cfg->cfg, out_dir);
    p.run_stage(stage);
  });
}

pc_status pc_run_pipeline(const pc_config_t* cfg, const char* out_dir, int resume,
                          char** executed_csv, char** err) {
  return guarded(err, [&] {
    if (!cfg || !out_dir) fail(Err::config, "null argument");
    pipeline::Pipeline p(cfg->cfg, out_dir);
    auto executed = p.run(resume != 0);
    if (executed_csv) {
      std::string joined;
      for (size_t i = 0; i < executed.size(); ++i) {
        if (i) joined += ",";
        joined += executed[i];
      }
      *executed_csv = dup_string(joined);
    }
  });
}

pc_status pc_kg_generate(const char* mission, int v, int n, const char* provider_kind,
                         const char* endpoint, uint64_t seed, const char* out_path, char** err) {
  return guarded(err, [&] {
    if (!mission || !provider_kind || !out_path) fail(Err::config, "null argument");
    ProviderConfig pc;
    pc.kind = ProviderConfig::kind_from_string(provider_kind);
    pc.endpoint = endpoint ? endpoint : "";
    pc.seed = seed;
    if (pc.kind == ProviderConfig::Kind::http && pc.endpoint.empty())
      fail(Err::config, "http provider requires an endpoint");
    auto graph = kg::generate_graph(mission, v, n, pc);
    auto report = kg::validate_graph(graph);
    if (!report.ok())
      fail(Err::graph, "generated graph failed validation: " + report.violations.front().kind);
    kg::save_kg(graph, out_path);
  });
}

pc_status pc_sweep(const pc_config_t* cfg, const char* out_dir, const char* fractions_csv,
                   char** err) {
  return guarded(err, [&] {
    if (!cfg || !out_dir) fail(Err::config, "null argument");
    std::vector<double> fractions;
    if (fractions_csv && *fractions_csv) {
      for (const auto& part : split(fractions_csv, ','))
        if (!trim(part).empty()) fractions.push_back(std::stod(trim(part)));
    } else {
      fractions = cfg->cfg.sweep_fractions();
    }
    pipeline::run_sweep(cfg->cfg, out_dir, fractions);
  });
}

pc_status pc_cost(const pc_config_t* cfg, char** json_out, char** err) {
  return guarded(err, [&] {
    if (!cfg || !json_out) fail(Err::config, "null argument");
    *json_out = dup_string(pipeline::cost_json(cfg->cfg).dump(2));
  });
}

pc_status pc_report(const char* artifact_dir, char** text_out, char** err) {
  return guarded(err, [&] {
    if (!artifact_dir || !text_out) fail(Err::config, "null argument");
    *text_out = dup_string(pipeline::render_report(artifact_dir));
  });
}

pc_status pc_scorer_open(const char* artifact_dir, pc_scorer_t** out, char** err) {
  return guarded(err, [&] {
    if (!artifact_dir || !out) fail(Err::config, "null argument");
    namespace fs = std::filesystem;
    auto scorer = std::make_unique<pc_scorer_t>();
    scorer->model = reason::load_model((fs::path(artifact_dir) / "model.json").string());
    scorer->heads = contrastive::load_heads((fs::path(artifact_dir) / "heads.json").string());

    embed::BaseEncoderConfig tc;
    tc.modality = embed::BaseEncoderConfig::Modality::text;
    tc.output_dim = scorer->heads.text.input_dim();
    scorer->text_enc = std::make_unique<embed::BaseEncoder>(tc);
    embed::BaseEncoderConfig pc;
    pc.modality = embed::BaseEncoderConfig::Modality::packet;
    pc.output_dim = scorer->heads.packet.input_dim();
    scorer->packet_enc = std::make_unique<embed::BaseEncoder>(pc);

    std::ifstream in((fs::path(artifact_dir) / "kgs.json").string());
    if (!in) fail(Err::io, "missing kgs.json in " + std::string(artifact_dir));
    nlohmann::json kj;
    in >> kj;
    for (const auto& [mission, gj] : kj.items()) {
      auto graph = kg::kg_from_json(gj);
      scorer->contexts.push_back(
          reason::make_mission_context(graph, scorer->heads, *scorer->text_enc,
                                       scorer->model.config));
    }
    if (scorer->contexts.size() != scorer->model.missions.size())
      fail(Err::state, "kgs.json mission count does not match the model checkpoint");
    scorer->engine = std::make_unique<reason::Engine>(&scorer->model, &scorer->contexts);
    *out = scorer.release();
  });
}

void pc_scorer_close(pc_scorer_t* scorer) { delete scorer; }

pc_status pc_scorer_classes(const pc_scorer_t* scorer, char** csv_out, char** err) {
  return guarded(err, [&] {
    if (!scorer || !csv_out) fail(Err::config, "null argument");
    std::string joined;
    for (size_t i = 0; i < scorer->model.classes.size(); ++i) {
      if (i) joined += ",";
      joined += scorer->model.classes[i];
    }
    *csv_out = dup_string(joined);
  });
}

pc_status pc_scorer_reset(pc_scorer_t* scorer) {
  if (!scorer) return PC_ERR_CONFIG;
  scorer->history.clear();
  return PC_OK;
}

pc_status pc_scorer_push(pc_scorer_t* scorer, const uint8_t* payload, size_t payload_len,
                         int64_t ts_us, double* scores_out, size_t scores_cap,
                         size_t* n_classes, char** err) {
  (void)ts_us;  // tokens are pushed in arrival order
  return guarded(err, [&] {
    if (!scorer || (!payload && payload_len > 0)) fail(Err::config, "null argument");
    const auto& cfg = scorer->model.config;
    const size_t n_cls = scorer->model.classes.size();
    if (n_classes) *n_classes = n_cls;
    if (scores_cap < n_cls)
      fail(Err::shape, "scores buffer holds " + std::to_string(scores_cap) + ", need " +
                           std::to_string(n_cls));

    std::vector<uint8_t> bytes(payload, payload + payload_len);
    Mat z = reason::packet_embedding(bytes, scorer->heads, *scorer->packet_enc, cfg);
    Mat token = scorer->engine->tokens_for(z);  // 1 x M*D

    scorer->history.push_back(token);
    while (int(scorer->history.size()) > cfg.window) scorer->history.pop_front();

    // left-pad with the earliest token
    Mat stacked(cfg.window, token.cols());
    int pad = cfg.window - int(scorer->history.size());
    for (int i = 0; i < cfg.window; ++i) {
      const Mat& src = scorer->history[size_t(std::max(0, i - pad))];
      std::copy(src.data(), src.data() + src.size(), stacked.row(i));
    }
    std::vector<std::vector<int>> windows(1);
    for (int i = 0; i < cfg.window; ++i) windows[0].push_back(i);
    Mat probs = scorer->engine->probs_for(stacked, windows);
    for (size_t c = 0; c < n_cls; ++c) scores_out[c] = probs.at(0, int(c));
  });
}

}  // extern "C"
