#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "splatgraph/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Gaussian scene-graph reconstruction toolkit"};
  app.require_subcommand(1);

  std::string dataset, config, out, spec, ckpt, resume, frames, script;
  std::vector<std::string> sets;
  long long seed = -1, iterations = -1;
  int cam = 0, substeps = 1, stride = 1, node_id = -1, threads = 1;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", spec, "synthetic spec JSON");
  synth->add_option("--set", sets, "spec overrides key=value");
  synth->add_option("--seed", seed, "seed override");
  synth->add_option("--frames", iterations, "frame count override");
  synth->add_option("--out", out, "output dataset directory")->required();

  CLI::App* pose = app.add_subcommand("pose-prep",
                                      "associate detections and fuse body poses");
  pose->add_option("--dataset", dataset, "dataset directory")->required();
  pose->add_option("--out", out, "output JSON path");

  CLI::App* train = app.add_subcommand("train", "optimize a scene on a dataset");
  train->add_option("--dataset", dataset, "dataset directory")->required();
  train->add_option("--config", config, "trainer config JSON");
  train->add_option("--set", sets, "config overrides key=value");
  train->add_option("--iterations", iterations, "iteration count override");
  train->add_option("--seed", seed, "seed override");
  train->add_option("--threads", threads, "rasterizer threads");
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--out", out, "run output directory")->required();

  CLI::App* render = app.add_subcommand("render", "write rendered frames");
  render->add_option("--checkpoint", ckpt, "checkpoint or scene file")->required();
  render->add_option("--dataset", dataset, "dataset directory (cameras)")->required();
  render->add_option("--cam", cam, "camera index");
  render->add_option("--frames", frames, "frame range a, a:b, or a:b:step");
  render->add_option("--substeps", substeps, "renders per frame step at interpolated times");
  render->add_option("--threads", threads, "rasterizer threads");
  render->add_option("--out", out, "output directory")->required();

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint against a dataset");
  eval->add_option("--checkpoint", ckpt, "checkpoint or scene file")->required();
  eval->add_option("--dataset", dataset, "dataset directory")->required();
  eval->add_option("--stride", stride, "evaluate every n-th training frame");
  eval->add_option("--threads", threads, "rasterizer threads");
  eval->add_option("--out", out, "report output directory")->required();

  CLI::App* edit = app.add_subcommand("edit", "apply a scene edit script");
  edit->add_option("--checkpoint", ckpt, "checkpoint or scene file")->required();
  edit->add_option("--script", script, "edit script JSON")->required();
  edit->add_option("--out", out, "edited scene output path")->required();

  CLI::App* exp = app.add_subcommand("export", "export one node as an asset");
  exp->add_option("--checkpoint", ckpt, "checkpoint or scene file")->required();
  exp->add_option("--node", node_id, "node id")->required();
  exp->add_option("--out", out, "asset output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (synth->parsed())
      splatgraph::cli::cmd_synth(spec, sets, seed, iterations, out);
    else if (pose->parsed())
      splatgraph::cli::cmd_pose_prep(dataset, out);
    else if (train->parsed())
      splatgraph::cli::cmd_train(dataset, config, sets, iterations, seed, out,
                                 resume, threads);
    else if (render->parsed())
      splatgraph::cli::cmd_render(ckpt, dataset, out, cam, frames, substeps,
                                  threads);
    else if (eval->parsed())
      splatgraph::cli::cmd_eval(ckpt, dataset, out, stride, threads);
    else if (edit->parsed())
      splatgraph::cli::cmd_edit(ckpt, script, out);
    else if (exp->parsed())
      splatgraph::cli::cmd_export(ckpt, node_id, out);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
