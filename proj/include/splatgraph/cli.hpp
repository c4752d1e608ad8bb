#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "splatgraph/evaluation.hpp"
#include "splatgraph/image_io.hpp"
#include "splatgraph/synthetic.hpp"
#include "splatgraph/trainer.hpp"

// Command implementations behind the batch binary. Input problems throw
// std::invalid_argument (exit 2); runtime failures such as training
// divergence surface as std::runtime_error (exit 3).
namespace splatgraph {
namespace cli {

namespace fs = std::filesystem;

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

// Accepts both trainer checkpoints and bare scene files.
inline SceneGraph load_any_scene(const std::string& path) {
  if (!fs::exists(path)) throw std::invalid_argument("cannot open: " + path);
  SgbinFile f = SgbinFile::load(path);
  if (!f.has("format")) throw std::invalid_argument(path + ": not a scene file");
  std::string format = f.str("format");
  if (format == "ckpt/1") return read_scene_records(f, "scene/");
  if (format == "scene/1") return read_scene_records(f);
  throw std::invalid_argument(path + ": unsupported format " + format);
}

inline Dataset open_dataset(const std::string& root) {
  try {
    return load_dataset(root);
  } catch (const std::exception& e) {
    throw std::invalid_argument(std::string("dataset: ") + e.what());
  }
}

// key=value overrides; values parse as JSON scalars, falling back to strings.
// A "trainer." (or given) prefix on the key is accepted and stripped.
inline void apply_overrides(nlohmann::json& cfg,
                            const std::vector<std::string>& sets,
                            const std::string& prefix = "trainer.") {
  for (const std::string& kv : sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("--set expects key=value, got: " + kv);
    std::string key = kv.substr(0, eq), value = kv.substr(eq + 1);
    if (key.rfind(prefix, 0) == 0) key = key.substr(prefix.size());
    nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
    if (parsed.is_discarded() || parsed.is_object() || parsed.is_array())
      cfg[key] = value;
    else
      cfg[key] = parsed;
  }
}

inline nlohmann::json spec_to_json(const SyntheticSpec& s) {
  return nlohmann::json{{"seed", s.seed},
                        {"n_frames", s.n_frames},
                        {"width", s.width},
                        {"height", s.height},
                        {"n_cameras", s.n_cameras},
                        {"n_background", s.n_background},
                        {"focal", s.focal},
                        {"budget_scale", s.budget_scale},
                        {"box_noise_t", s.box_noise_t},
                        {"box_noise_yaw", s.box_noise_yaw},
                        {"theta_noise", s.theta_noise},
                        {"detection_drop", s.detection_drop},
                        {"pose_drop", s.pose_drop},
                        {"lidar_fraction", s.lidar_fraction}};
}

inline SyntheticSpec spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  nlohmann::json known = spec_to_json(s);
  for (const auto& item : j.items())
    if (!known.contains(item.key())) {
      std::string keys;
      for (const auto& k : known.items()) keys += (keys.empty() ? "" : ", ") + k.key();
      throw std::invalid_argument("spec: unknown key '" + item.key() +
                                  "'; valid keys: " + keys);
    }
  auto get = [&](const char* k, auto& field) {
    if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
  };
  get("seed", s.seed);
  get("n_frames", s.n_frames);
  get("width", s.width);
  get("height", s.height);
  get("n_cameras", s.n_cameras);
  get("n_background", s.n_background);
  get("focal", s.focal);
  get("budget_scale", s.budget_scale);
  get("box_noise_t", s.box_noise_t);
  get("box_noise_yaw", s.box_noise_yaw);
  get("theta_noise", s.theta_noise);
  get("detection_drop", s.detection_drop);
  get("pose_drop", s.pose_drop);
  get("lidar_fraction", s.lidar_fraction);
  return s;
}

inline void write_text(const std::string& path, const std::string& text) {
  fs::path parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << text;
}

inline void cmd_synth(const std::string& spec_path,
                      const std::vector<std::string>& sets, long long seed,
                      long long frames, const std::string& out) {
  nlohmann::json j = spec_path.empty() ? spec_to_json(SyntheticSpec{})
                                       : load_json_file(spec_path);
  nlohmann::json merged = spec_to_json(SyntheticSpec{});
  merged.update(j);
  apply_overrides(merged, sets, "synth.");
  if (seed >= 0) merged["seed"] = seed;
  if (frames > 0) merged["n_frames"] = frames;
  SyntheticSpec spec = spec_from_json(merged);
  SynthSummary s = write_synthetic(spec, out);
  write_text(out + "/synth_spec.json", spec_to_json(spec).dump(2) + "\n");
  std::printf("dataset %s: %d frames x %d cameras, %zu background blobs, "
              "%zu node blobs, %zu lidar points\n",
              out.c_str(), s.n_frames, s.n_cameras, s.bg_blobs, s.node_blobs,
              s.lidar_points);
}

inline void cmd_pose_prep(const std::string& dataset, std::string out_file) {
  Dataset ds = open_dataset(dataset);
  PosePipelineResult result = prepare_body_poses(ds);
  if (out_file.empty()) out_file = dataset + "/poses_fused.json";
  nlohmann::json matches = nlohmann::json::array();
  std::printf("tracklet  cam  local  mean_iou\n");
  for (const TrackMatch& m : result.matches) {
    std::printf("%8d  %3d  %5d  %.4f\n", m.tracklet_id, m.cam_id, m.local_id,
                m.mean_iou);
    matches.push_back({{"tracklet", m.tracklet_id},
                       {"cam", m.cam_id},
                       {"local", m.local_id},
                       {"mean_iou", m.mean_iou}});
  }
  nlohmann::json sequences = nlohmann::json::object();
  for (const auto& [id, body] : result.body) {
    nlohmann::json theta = nlohmann::json::array();
    for (const auto& frame : body.theta) {
      nlohmann::json row = nlohmann::json::array();
      for (const Vec4& q : frame) row.push_back({q[0], q[1], q[2], q[3]});
      theta.push_back(row);
    }
    sequences[std::to_string(id)] = {
        {"n_joints", body.n_joints},
        {"theta", theta},
        {"valid", std::vector<int>(body.valid.begin(), body.valid.end())},
        {"provenance",
         std::vector<int>(body.provenance.begin(), body.provenance.end())}};
  }
  nlohmann::json out{{"matches", matches},
                     {"sequences", sequences},
                     {"demoted", result.demoted}};
  write_text(out_file, out.dump(2) + "\n");
  std::printf("wrote %s (%zu humans, %zu demoted)\n", out_file.c_str(),
              result.body.size(), result.demoted.size());
}

inline constexpr const char* kMetricsHeader =
    "iter,total,l1,ssim,depth,opacity,pose,blobs,psnr_full,ssim_full,"
    "psnr_human,ssim_human,psnr_vehicle,ssim_vehicle";

inline void cmd_train(const std::string& dataset, const std::string& config_path,
                      const std::vector<std::string>& sets, long long iterations,
                      long long seed, const std::string& out,
                      const std::string& resume, int num_threads) {
  Dataset ds = open_dataset(dataset);
  nlohmann::json j = config_path.empty() ? nlohmann::json::object()
                                         : load_json_file(config_path);
  apply_overrides(j, sets);
  if (iterations >= 0) j["iterations"] = iterations;
  if (seed >= 0) j["seed"] = seed;
  if (num_threads > 0) j["num_threads"] = num_threads;
  TrainConfig cfg = TrainConfig::from_json(j);

  fs::create_directories(out);
  write_text(out + "/config.json", cfg.to_json().dump(2) + "\n");

  Trainer tr(ds, cfg);
  if (resume.empty())
    tr.initialize();
  else
    tr.resume(resume);
  for (const std::string& w : tr.warnings()) std::printf("warning: %s\n", w.c_str());

  int probe = 0;
  while (probe < ds.n_frames && ds.is_test_frame(probe)) ++probe;
  std::ofstream csv(out + "/metrics.csv", std::ios::binary);
  csv << kMetricsHeader << "\n";
  tr.run(out, [&](const MetricsRow& row) {
    FrameScore s = score_frame(tr.scene(), tr.scene(), ds, 0, probe, cfg.num_threads);
    char line[512];
    std::snprintf(line, sizeof(line),
                  "%lld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g,%zu,%.4f,%.6f,%.4f,%.6f,"
                  "%.4f,%.6f",
                  row.iter, row.total, row.report.l1, row.report.ssim,
                  row.report.depth, row.report.opacity, row.report.pose,
                  row.blobs, s.psnr_full, s.ssim_full, s.psnr_articulated,
                  s.ssim_articulated, s.psnr_rigid, s.ssim_rigid);
    csv << line << "\n";
    csv.flush();
    std::printf("iter %lld  loss %.6g  blobs %zu  psnr %.2f\n", row.iter,
                row.total, row.blobs, s.psnr_full);
  });
  std::printf("final checkpoint: %s\n",
              Trainer::checkpoint_path(out, tr.iteration()).c_str());
}

// "a", "a:b" (inclusive), or "a:b:step".
inline std::vector<int> parse_frame_range(const std::string& spec, int n_frames) {
  std::vector<int> frames;
  if (spec.empty()) {
    for (int f = 0; f < n_frames; ++f) frames.push_back(f);
    return frames;
  }
  int a = 0, b = 0, step = 1;
  int got = std::sscanf(spec.c_str(), "%d:%d:%d", &a, &b, &step);
  if (got == 1) b = a;
  if (got < 1 || step < 1)
    throw std::invalid_argument("bad --frames spec: " + spec);
  if (a < 0 || b >= n_frames || b < a)
    throw std::invalid_argument("--frames outside [0, " +
                                std::to_string(n_frames - 1) + "]: " + spec);
  for (int f = a; f <= b; f += step) frames.push_back(f);
  return frames;
}

inline void cmd_render(const std::string& ckpt, const std::string& dataset,
                       const std::string& out, int cam_idx,
                       const std::string& frames_spec, int substeps,
                       int num_threads) {
  SceneGraph scene = load_any_scene(ckpt);
  Dataset ds = open_dataset(dataset);
  if (cam_idx < 0 || cam_idx >= static_cast<int>(ds.cameras.size()))
    throw std::invalid_argument("--cam outside the dataset's camera list");
  if (substeps < 1) throw std::invalid_argument("--substeps must be >= 1");
  std::vector<int> frames = parse_frame_range(frames_spec, ds.n_frames);
  fs::create_directories(out);
  int written = 0;
  for (int f : frames) {
    Camera cam = ds.camera_at(cam_idx, f);
    for (int k = 0; k < substeps; ++k) {
      double t = f + static_cast<double>(k) / substeps;
      if (t > ds.n_frames - 1 + 1e-9) break;
      std::vector<double> img =
          clamp_unit(render_frame(scene, cam, t, num_threads).color);
      char name[32];
      std::snprintf(name, sizeof(name), "frame_%06d.png", written);
      write_rgb16(out + "/" + name, img, cam.width, cam.height);
      ++written;
    }
  }
  std::printf("wrote %d frames to %s\n", written, out.c_str());
}

inline void cmd_eval(const std::string& ckpt, const std::string& dataset,
                     const std::string& out, int stride, int num_threads) {
  SceneGraph scene = load_any_scene(ckpt);
  Dataset ds = open_dataset(dataset);
  EvalReport report = evaluate_scene(scene, scene, ds, stride, num_threads);
  write_text(out + "/eval.json", report.to_json().dump(2) + "\n");
  std::printf("reconstruction: psnr %.2f  ssim %.4f  (%zu frames)\n",
              report.reconstruction.mean(&FrameScore::psnr_full),
              report.reconstruction.mean(&FrameScore::ssim_full),
              report.reconstruction.frames.size());
  std::printf("nvs:            psnr %.2f  ssim %.4f  (%zu frames)\n",
              report.nvs.mean(&FrameScore::psnr_full),
              report.nvs.mean(&FrameScore::ssim_full), report.nvs.frames.size());
  std::printf("report: %s/eval.json\n", out.c_str());
}

inline void cmd_export(const std::string& ckpt, int node_id,
                       const std::string& out) {
  SceneGraph scene = load_any_scene(ckpt);
  const SceneNode* node = scene.find_node(node_id);
  if (!node) throw std::invalid_argument("no node with id " + std::to_string(node_id));
  SceneGraph asset;
  asset.timestamps = scene.timestamps;
  asset.sky = EnvironmentMap(2, 4);
  asset.deform_net = scene.deform_net;
  asset.nodes.push_back(*node);
  fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  SgbinWriter w(out);
  w.put_string("format", "asset/1");
  write_scene_records(w, asset);
  w.finish();
  std::printf("exported node %d (%s, %zu blobs) to %s\n", node_id,
              node->class_label.c_str(), node->canonical.size(), out.c_str());
}

inline SceneGraph load_asset(const std::string& path) {
  if (!fs::exists(path)) throw std::invalid_argument("cannot open: " + path);
  SgbinFile f = SgbinFile::load(path);
  if (!f.has("format") || f.str("format") != "asset/1")
    throw std::invalid_argument(path + ": not an exported node asset");
  SceneGraph asset = read_scene_records(f);
  if (asset.nodes.size() != 1)
    throw std::invalid_argument(path + ": asset must hold exactly one node");
  return asset;
}

namespace edit_detail {

inline std::size_t node_index(const SceneGraph& scene, int id) {
  for (std::size_t i = 0; i < scene.nodes.size(); ++i)
    if (scene.nodes[i].id == id) return i;
  throw std::invalid_argument("edit: no node with id " + std::to_string(id));
}

inline void apply_insert(SceneGraph& scene, const nlohmann::json& rec) {
  SceneGraph asset = load_asset(rec.at("asset").get<std::string>());
  SceneNode node = asset.nodes[0];
  if (node.pose.n_frames() != scene.n_frames())
    throw std::invalid_argument(
        "edit: asset timeline does not match the scene's frame count");
  if (rec.contains("id")) {
    node.id = rec.at("id").get<int>();
  } else {
    int next = 0;
    for (const SceneNode& n : scene.nodes) next = std::max(next, n.id + 1);
    node.id = next;
  }
  for (const SceneNode& n : scene.nodes)
    if (n.id == node.id)
      throw std::invalid_argument("edit: id " + std::to_string(node.id) +
                                  " already present");
  if (rec.contains("translate")) {
    auto t = rec.at("translate");
    if (!t.is_array() || t.size() != 3)
      throw std::invalid_argument("edit: translate must be [x, y, z]");
    Vec3 d(t[0].get<double>(), t[1].get<double>(), t[2].get<double>());
    for (QuatPose& p : node.pose.base) p.t += d;
  }
  scene.nodes.push_back(std::move(node));
}

inline void apply_swap(SceneGraph& scene, const nlohmann::json& rec) {
  std::size_t i = node_index(scene, rec.at("node").get<int>());
  SceneGraph asset = load_asset(rec.at("asset").get<std::string>());
  SceneNode& dst = scene.nodes[i];
  const SceneNode& src = asset.nodes[0];
  if (src.kind == NodeKind::kArticulated &&
      src.body.n_frames() != scene.n_frames())
    throw std::invalid_argument(
        "edit: swap payload's body poses do not span the scene timeline");
  dst.kind = src.kind;
  dst.class_label = src.class_label;
  dst.box_dims = src.box_dims;
  dst.canonical = src.canonical;
  dst.tmpl = src.tmpl;
  dst.skin = src.skin;
  dst.body = src.body;
  dst.embed = src.embed;
  dst.norm_box = src.norm_box;
}

inline void apply_retime(SceneGraph& scene, const nlohmann::json& rec) {
  std::size_t i = node_index(scene, rec.at("node").get<int>());
  int shift = rec.at("shift").get<int>();
  SceneNode& node = scene.nodes[i];
  int n = static_cast<int>(node.pose.n_frames());
  TrackedPose moved;
  moved.base.resize(n);
  moved.valid.assign(n, 0);
  moved.init_residuals();
  for (int f = 0; f < n; ++f) {
    int src = f - shift;
    int clamped = std::clamp(src, 0, n - 1);
    moved.base[f] = node.pose.base[clamped];
    moved.rot_residual[f] = node.pose.rot_residual[clamped];
    moved.trans_residual[f] = node.pose.trans_residual[clamped];
    moved.valid[f] = (src >= 0 && src < n) ? node.pose.valid[src] : 0;
  }
  node.pose = std::move(moved);
  if (node.kind == NodeKind::kArticulated &&
      static_cast<int>(node.body.n_frames()) == n) {
    BodyPoseSequence body = node.body;
    for (int f = 0; f < n; ++f) {
      int src = f - shift;
      int clamped = std::clamp(src, 0, n - 1);
      body.theta[f] = node.body.theta[clamped];
      body.provenance[f] = node.body.provenance[clamped];
      body.valid[f] = (src >= 0 && src < n) ? node.body.valid[src] : 0;
    }
    node.body = std::move(body);
  }
}

}  // namespace edit_detail

// Applies the script to a copy and only persists when every record succeeds.
inline void cmd_edit(const std::string& ckpt, const std::string& script_path,
                     const std::string& out) {
  SceneGraph scene = load_any_scene(ckpt);
  nlohmann::json script = load_json_file(script_path);
  if (!script.is_array())
    throw std::invalid_argument("edit script must be a JSON array of records");
  SceneGraph edited = scene;
  for (const nlohmann::json& rec : script) {
    if (!rec.is_object() || !rec.contains("op"))
      throw std::invalid_argument("edit record needs an \"op\" field");
    std::string op = rec.at("op").get<std::string>();
    try {
      if (op == "insert") {
        edit_detail::apply_insert(edited, rec);
      } else if (op == "remove") {
        edited.nodes.erase(edited.nodes.begin() +
                           static_cast<std::ptrdiff_t>(edit_detail::node_index(
                               edited, rec.at("node").get<int>())));
      } else if (op == "swap") {
        edit_detail::apply_swap(edited, rec);
      } else if (op == "retime") {
        edit_detail::apply_retime(edited, rec);
      } else {
        throw std::invalid_argument("unknown op: " + op);
      }
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument(std::string("edit: malformed record: ") +
                                  e.what());
    }
  }
  edited.validate();
  fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  save_scene(out, edited);
  std::printf("applied %zu edits, wrote %s\n", script.size(), out.c_str());
}

}  // namespace cli
}  // namespace splatgraph
