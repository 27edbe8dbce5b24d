// packetclip command line. Drives the shared library through the C API only.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "packetclip.h"

namespace {

struct ConfigHandle {
  pc_config_t* cfg = nullptr;
  ~ConfigHandle() {
    if (cfg) pc_config_close(cfg);
  }
};

struct StringOut {
  char* s = nullptr;
  ~StringOut() {
    if (s) pc_string_free(s);
  }
};

int report_error(const char* what, pc_status status, char* err) {
  std::fprintf(stderr, "packetclip %s failed (%d): %s\n", what, int(status),
               err ? err : "unknown error");
  if (err) pc_string_free(err);
  return 1;
}

int open_config(const std::string& path, const std::vector<std::string>& overrides,
                ConfigHandle& handle) {
  char* err = nullptr;
  pc_status st = path.empty() ? pc_config_parse("", &handle.cfg, &err)
                              : pc_config_open(path.c_str(), &handle.cfg, &err);
  if (st != PC_OK) return report_error("config", st, err);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "--set expects key=value, got '%s'\n", kv.c_str());
      return 1;
    }
    std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    st = pc_config_set(handle.cfg, key.c_str(), value.c_str(), &err);
    if (st != PC_OK) return report_error("config override", st, err);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"packetclip: traffic-language alignment and hierarchical reasoning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pc_version()));

  std::string config_path;
  std::string out_dir = "artifacts";
  std::vector<std::string> overrides;
  bool resume = false;

  auto add_common = [&](CLI::App* cmd, bool needs_config = true) {
    if (needs_config)
      cmd->add_option("-c,--config", config_path, "pipeline config (key = value file)");
    cmd->add_option("-o,--out", out_dir, "artifact directory");
    cmd->add_option("--set", overrides, "config override key=value (repeatable)");
  };

  auto* run = app.add_subcommand("run", "execute the full pipeline");
  add_common(run);
  run->add_flag("--resume", resume, "skip stages whose artifacts are fresh");

  const std::vector<std::string> stage_names = {"ingest",   "corpus", "pretrain",
                                                "train",    "infer",  "evaluate"};
  std::vector<CLI::App*> stage_cmds;
  for (const auto& name : stage_names) {
    auto* cmd = app.add_subcommand(name, "run the " + name + " stage");
    add_common(cmd);
    stage_cmds.push_back(cmd);
  }

  // kg doubles as a stage and a standalone generator
  auto* kg_cmd = app.add_subcommand("kg", "run the knowledge-graph stage");
  add_common(kg_cmd);
  std::string kg_mission = "dos", kg_provider = "stub", kg_endpoint, kg_out = "kg.json";
  int kg_v = 10, kg_n = 2;
  uint64_t kg_seed = 42;
  auto* kg_gen = kg_cmd->add_subcommand("generate", "generate one mission graph");
  kg_gen->add_option("--mission", kg_mission, "mission name")->required();
  kg_gen->add_option("--v", kg_v, "key concepts per mission");
  kg_gen->add_option("--n", kg_n, "concept layers");
  kg_gen->add_option("--provider", kg_provider, "stub|http");
  kg_gen->add_option("--endpoint", kg_endpoint, "chat-completion URL (http provider)");
  kg_gen->add_option("--seed", kg_seed, "stub determinism seed");
  kg_gen->add_option("--out", kg_out, "output graph json");

  auto* sweep = app.add_subcommand("sweep", "data-scarcity sweep over training fractions");
  add_common(sweep);
  std::string fractions;
  sweep->add_option("--fractions", fractions, "comma-separated fractions (default config)");

  auto* cost = app.add_subcommand("cost", "parameter and FLOP accounting");
  add_common(cost);

  auto* report = app.add_subcommand("report", "render evaluation artifacts as tables");
  report->add_option("-o,--out", out_dir, "artifact directory");

  CLI11_PARSE(app, argc, argv);

  char* err = nullptr;

  if (kg_gen->parsed()) {
    pc_status st = pc_kg_generate(kg_mission.c_str(), kg_v, kg_n, kg_provider.c_str(),
                                  kg_endpoint.empty() ? nullptr : kg_endpoint.c_str(), kg_seed,
                                  kg_out.c_str(), &err);
    if (st != PC_OK) return report_error("kg generate", st, err);
    std::printf("wrote %s\n", kg_out.c_str());
    return 0;
  }

  if (report->parsed()) {
    StringOut text;
    pc_status st = pc_report(out_dir.c_str(), &text.s, &err);
    if (st != PC_OK) return report_error("report", st, err);
    std::fputs(text.s, stdout);
    return 0;
  }

  ConfigHandle cfg;
  if (int rc = open_config(config_path, overrides, cfg); rc != 0) return rc;

  if (run->parsed()) {
    StringOut executed;
    pc_status st = pc_run_pipeline(cfg.cfg, out_dir.c_str(), resume ? 1 : 0, &executed.s, &err);
    if (st != PC_OK) return report_error("run", st, err);
    std::printf("executed stages: %s\n", executed.s && *executed.s ? executed.s : "(none)");
    return 0;
  }

  if (sweep->parsed()) {
    pc_status st = pc_sweep(cfg.cfg, out_dir.c_str(),
                            fractions.empty() ? nullptr : fractions.c_str(), &err);
    if (st != PC_OK) return report_error("sweep", st, err);
    std::printf("wrote %s/sweep.json and sweep.csv\n", out_dir.c_str());
    return 0;
  }

  if (cost->parsed()) {
    StringOut text;
    pc_status st = pc_cost(cfg.cfg, &text.s, &err);
    if (st != PC_OK) return report_error("cost", st, err);
    std::printf("%s\n", text.s);
    return 0;
  }

  if (kg_cmd->parsed()) {
    pc_status st = pc_run_stage(cfg.cfg, "kg", out_dir.c_str(), &err);
    if (st != PC_OK) return report_error("kg", st, err);
    return 0;
  }

  for (size_t i = 0; i < stage_cmds.size(); ++i) {
    if (stage_cmds[i]->parsed()) {
      pc_status st = pc_run_stage(cfg.cfg, stage_names[i].c_str(), out_dir.c_str(), &err);
      if (st != PC_OK) return report_error(stage_names[i].c_str(), st, err);
      return 0;
    }
  }

  std::fprintf(stderr, "no subcommand executed\n");
  return 1;
}
