#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "rsp/harness.hpp"
#include "rsp/plot.hpp"

namespace {

void print_stage(const char* label, const rsp::StageResult& r, const rsp::Store& store,
                 bool with_log = true) {
  std::printf("%s %s%s%s\n", label, r.run_id.c_str(), r.cached ? " (cached)" : "",
              r.repaired ? " (repaired)" : "");
  for (const auto& [k, v] : r.metrics) std::printf("  %s %.6g\n", k.c_str(), v);
  if (with_log) std::printf("  log %s\n", store.path(r.run_id, ".metrics").c_str());
}

int run(int argc, char** argv) {
  CLI::App app{"resolution-sequence pretraining and consistency training workbench"};
  app.require_subcommand(1);

  std::string store_dir = "./runs";
  std::string profile, config_file;
  std::vector<std::string> sets;
  std::int64_t seed = -1;
  app.add_option("--store", store_dir, "artifact root directory")
      ->envname(rsp::kStoreEnvVar);
  app.add_option("--profile", profile, "named configuration profile");
  app.add_option("--config", config_file, "key=value configuration file");
  app.add_option("--set", sets, "override, key=value (repeatable)");
  app.add_option("--seed", seed, "master seed (shorthand for --set seed=N)");

  auto* cmd_gen = app.add_subcommand("gen-data", "generate the synthetic dataset");

  std::string method = "rsp";
  auto* cmd_pre = app.add_subcommand("pretrain", "self-supervised or baseline pretraining");
  cmd_pre->add_option("--method", method, "rsp | moco | vae | random");

  double alpha = 0.10;
  auto* cmd_ft = app.add_subcommand("finetune", "supervised fine-tuning on a label fraction");
  cmd_ft->add_option("--method", method, "initialization: rsp | moco | vae | random");
  cmd_ft->add_option("--alpha", alpha, "label fraction: 0.10 | 0.25 | 0.50 | 1.00");

  std::string from_run;
  auto* cmd_cr = app.add_subcommand("consist", "teacher-student consistency training");
  cmd_cr->add_option("--from", from_run, "existing finetune run id (defaults to running one)");
  cmd_cr->add_option("--method", method, "initialization when --from is not given");
  cmd_cr->add_option("--alpha", alpha, "label fraction when --from is not given");

  std::string eval_run;
  auto* cmd_eval = app.add_subcommand("eval", "held-out metrics for a trained run");
  cmd_eval->add_option("--run", eval_run, "finetune or consist run id")->required();

  std::string out_file;
  auto* cmd_matrix = app.add_subcommand("matrix", "run the method x phase x alpha x seed grid");
  cmd_matrix->add_option("--out", out_file, "also write the summary table to this file");

  std::string axis;
  auto* cmd_abl = app.add_subcommand("ablate", "sweep one consistency knob across 1..7");
  cmd_abl->add_option("--axis", axis, "mu | n_aug")->required();
  cmd_abl->add_option("--out", out_file, "also write the summary table to this file");

  std::string log_path, plot_run, heat_run, plot_out;
  int pyramid = 0;
  auto* cmd_plot = app.add_subcommand("plot", "learning curves or probability heatmaps");
  cmd_plot->add_option("--log", log_path, "metrics log file to render");
  cmd_plot->add_option("--run", plot_run, "render the metrics log of this run id");
  cmd_plot->add_option("--heatmap", heat_run, "export a probability map for this model run");
  cmd_plot->add_option("--pyramid", pyramid, "held-out pyramid index for --heatmap");
  cmd_plot->add_option("--out", plot_out, "output path (.svg) or basename (heatmap)");

  // Global options may also appear after the subcommand name.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  auto cfg = rsp::default_config();
  if (!profile.empty()) rsp::apply_profile(cfg, profile);
  if (!config_file.empty()) rsp::apply_file(cfg, config_file);
  rsp::apply_overrides(cfg, sets);
  if (seed >= 0) cfg.set_override("seed", std::to_string(seed));

  rsp::Store store(store_dir);

  if (cmd_gen->parsed()) {
    const auto r = rsp::gen_data(cfg, store);
    print_stage("gen-data", r, store, false);
    return 0;
  }
  if (cmd_pre->parsed()) {
    const auto d = rsp::gen_data(cfg, store);
    const auto r = rsp::pretrain_stage(cfg, method, d.run_id, store);
    print_stage("pretrain", r, store);
    return 0;
  }
  if (cmd_ft->parsed()) {
    const auto d = rsp::gen_data(cfg, store);
    const auto r = rsp::finetune_stage(cfg, method, alpha, d.run_id, store);
    print_stage("finetune", r, store);
    return 0;
  }
  if (cmd_cr->parsed()) {
    if (from_run.empty()) {
      const auto d = rsp::gen_data(cfg, store);
      from_run = rsp::finetune_stage(cfg, method, alpha, d.run_id, store).run_id;
    }
    const auto r = rsp::consist_stage(cfg, from_run, store);
    print_stage("consist", r, store);
    return 0;
  }
  if (cmd_eval->parsed()) {
    const auto r = rsp::eval_stage(eval_run, store);
    print_stage("eval", r, store, false);
    std::printf("  report %s\n", store.path(r.run_id, ".report").c_str());
    return 0;
  }
  if (cmd_matrix->parsed()) {
    const auto rep = rsp::run_matrix(rsp::matrix_from_config(cfg), cfg, store);
    std::fputs(rep.table.c_str(), stdout);
    if (!out_file.empty()) {
      std::ofstream out(out_file);
      if (!out) throw rsp::IoError("cannot write " + out_file);
      out << rep.table;
    }
    return 0;
  }
  if (cmd_abl->parsed()) {
    const auto rep = rsp::ablate(axis, cfg, store);
    std::fputs(rep.table.c_str(), stdout);
    if (!out_file.empty()) {
      std::ofstream out(out_file);
      if (!out) throw rsp::IoError("cannot write " + out_file);
      out << rep.table;
    }
    return 0;
  }
  if (cmd_plot->parsed()) {
    const int picked = (!log_path.empty()) + (!plot_run.empty()) + (!heat_run.empty());
    if (picked != 1)
      throw rsp::ArgumentError("plot needs exactly one of --log, --run, --heatmap");
    if (!heat_run.empty()) {
      const std::string base = plot_out.empty() ? store.path(heat_run, "-heatmap") : plot_out;
      rsp::export_run_heatmap(heat_run, pyramid, base, store);
      std::printf("heatmap %s.pgm %s.mask.pgm %s.json\n", base.c_str(), base.c_str(),
                  base.c_str());
      return 0;
    }
    const std::string src = log_path.empty() ? store.path(plot_run, ".metrics") : log_path;
    const std::string dst = plot_out.empty() ? src + ".svg" : plot_out;
    rsp::write_curves_svg(src, dst);
    std::printf("curves %s\n", dst.c_str());
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const rsp::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const rsp::ArgumentError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const rsp::SamplingError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const rsp::NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 5;
  } catch (const rsp::IntegrityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 6;
  } catch (const rsp::IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 7;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
