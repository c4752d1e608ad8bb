#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "splatgraph/dataset.hpp"
#include "splatgraph/metrics.hpp"
#include "splatgraph/rasterizer.hpp"
#include "splatgraph/scene_graph.hpp"

namespace splatgraph {

// Forward render of one scene time through one camera, sky composited.
inline RenderOutput render_frame(const SceneGraph& scene, const Camera& cam,
                                 double t, int num_threads = 1) {
  WorldAssembly world = assemble_world(scene, t);
  RenderOptions opt;
  opt.sky = &scene.sky;
  opt.dynamic_flags = &world.dynamic_flags;
  opt.num_threads = num_threads;
  return render(cam, world.world, opt);
}

inline std::vector<double> clamp_unit(std::vector<double> img) {
  for (double& v : img) v = std::clamp(v, 0.0, 1.0);
  return img;
}

// Per-pixel coverage of blobs belonging to nodes of one kind; pixels above
// 0.5 count as that region when scoring region-restricted metrics.
inline std::vector<double> kind_region_mask(const SceneGraph& scene,
                                            const Camera& cam, double t,
                                            NodeKind kind, int num_threads = 1) {
  WorldAssembly world = assemble_world(scene, t);
  std::vector<std::uint8_t> flags(world.world.size(), 0);
  for (const WorldEntry& e : world.entries)
    if (scene.nodes[e.node_index].kind == kind)
      for (std::size_t i = 0; i < e.count; ++i) flags[e.start + i] = 1;
  return render_dynamic_mask(cam, world.world, flags, num_threads);
}

inline std::vector<double> dynamic_region_mask(const SceneGraph& scene,
                                               const Camera& cam, double t,
                                               int num_threads = 1) {
  WorldAssembly world = assemble_world(scene, t);
  return render_dynamic_mask(cam, world.world, world.dynamic_flags, num_threads);
}

// Mean SSIM over pixels the mask selects (all channels of those pixels).
inline double ssim_masked(const std::vector<double>& pred,
                          const std::vector<double>& gt, int width, int height,
                          const std::vector<double>& mask) {
  std::vector<double> map = ssim_map(pred, gt, width, height);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask[p] <= 0.5) continue;
    for (int ch = 0; ch < 3; ++ch) sum += map[p * 3 + ch];
    n += 3;
  }
  return n == 0 ? 1.0 : sum / static_cast<double>(n);
}

struct FrameScore {
  int cam = 0;
  int frame = 0;
  double psnr_full = 0.0;
  double ssim_full = 0.0;
  double psnr_dynamic = 0.0;
  double psnr_articulated = 0.0;
  double psnr_rigid = 0.0;
  double psnr_deformable = 0.0;
  double ssim_articulated = 1.0;
  double ssim_rigid = 1.0;
};

struct SplitSummary {
  std::vector<FrameScore> frames;

  double mean(double FrameScore::*field) const {
    if (frames.empty()) return 0.0;
    double sum = 0.0;
    for (const FrameScore& s : frames) sum += s.*field;
    return sum / static_cast<double>(frames.size());
  }

  nlohmann::json to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const FrameScore& s : frames)
      rows.push_back({{"cam", s.cam},
                      {"frame", s.frame},
                      {"psnr", s.psnr_full},
                      {"ssim", s.ssim_full},
                      {"psnr_dynamic", s.psnr_dynamic},
                      {"psnr_articulated", s.psnr_articulated},
                      {"psnr_rigid", s.psnr_rigid},
                      {"psnr_deformable", s.psnr_deformable},
                      {"ssim_articulated", s.ssim_articulated},
                      {"ssim_rigid", s.ssim_rigid}});
    return nlohmann::json{
        {"frames", rows},
        {"mean_psnr", mean(&FrameScore::psnr_full)},
        {"mean_ssim", mean(&FrameScore::ssim_full)},
        {"mean_psnr_dynamic", mean(&FrameScore::psnr_dynamic)},
        {"mean_psnr_articulated", mean(&FrameScore::psnr_articulated)},
        {"mean_psnr_rigid", mean(&FrameScore::psnr_rigid)},
        {"mean_psnr_deformable", mean(&FrameScore::psnr_deformable)}};
  }
};

struct EvalReport {
  SplitSummary reconstruction;  // training frames
  SplitSummary nvs;             // held-out frames

  nlohmann::json to_json() const {
    return nlohmann::json{{"reconstruction", reconstruction.to_json()},
                          {"nvs", nvs.to_json()}};
  }
};

// Scores one frame of `scene` against the stored image. Region masks come
// from `mask_scene` so ablated or edited scenes are judged on the regions the
// reference geometry occupies.
inline FrameScore score_frame(const SceneGraph& scene, const SceneGraph& mask_scene,
                              const Dataset& ds, int cam_idx, int frame,
                              int num_threads = 1) {
  Camera cam = ds.camera_at(cam_idx, frame);
  std::vector<double> gt = ds.load_image(cam_idx, frame);
  std::vector<double> pred =
      clamp_unit(render_frame(scene, cam, frame, num_threads).color);
  FrameScore s;
  s.cam = cam_idx;
  s.frame = frame;
  s.psnr_full = psnr(pred, gt);
  s.ssim_full = ssim_metric(pred, gt, cam.width, cam.height);
  s.psnr_dynamic = psnr_masked(
      pred, gt, dynamic_region_mask(mask_scene, cam, frame, num_threads));
  std::vector<double> human =
      kind_region_mask(mask_scene, cam, frame, NodeKind::kArticulated, num_threads);
  std::vector<double> vehicle =
      kind_region_mask(mask_scene, cam, frame, NodeKind::kRigid, num_threads);
  s.psnr_articulated = psnr_masked(pred, gt, human);
  s.psnr_rigid = psnr_masked(pred, gt, vehicle);
  s.psnr_deformable = psnr_masked(
      pred, gt,
      kind_region_mask(mask_scene, cam, frame, NodeKind::kDeformable, num_threads));
  s.ssim_articulated = ssim_masked(pred, gt, cam.width, cam.height, human);
  s.ssim_rigid = ssim_masked(pred, gt, cam.width, cam.height, vehicle);
  return s;
}

// Reconstruction (train split) and NVS (held-out split) scores over the
// whole dataset, optionally striding frames to bound runtime.
inline EvalReport evaluate_scene(const SceneGraph& scene,
                                 const SceneGraph& mask_scene, const Dataset& ds,
                                 int frame_stride = 1, int num_threads = 1) {
  EvalReport report;
  if (frame_stride < 1) frame_stride = 1;
  for (int f = 0; f < ds.n_frames; ++f) {
    bool test = ds.is_test_frame(f);
    if (!test && f % frame_stride != 0) continue;
    for (std::size_t c = 0; c < ds.cameras.size(); ++c) {
      FrameScore s =
          score_frame(scene, mask_scene, ds, static_cast<int>(c), f, num_threads);
      (test ? report.nvs : report.reconstruction).frames.push_back(s);
    }
  }
  return report;
}

}  // namespace splatgraph
