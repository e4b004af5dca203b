#pragma once

#include <memory>
#include <string>

#include "memfield/io.hpp"
#include "memfield/manifest.hpp"

namespace memfield::pipeline {

/// Executes the manifest's task end-to-end, writing all artifacts (images,
/// metrics CSVs, checkpoints, logs) under out_dir. Every artifact embeds the
/// manifest hash.
void run(const io::ExperimentManifest& manifest);

/// Trained scalar field with its input encoder; the fit stage of the
/// image/CT pipelines, reused by searches and the acceptance suite.
struct ScalarFit {
  net::FieldNetwork network;
  std::shared_ptr<enc::Encoder> encoder;
  std::vector<double> loss_trace;
};

/// Builds the manifest's input encoder for d-dimensional coordinates
/// (forming the Gaussian projection array from the manifest's noise model).
std::shared_ptr<enc::Encoder> make_input_encoder(
    const io::ExperimentManifest& manifest, int input_dim);

/// Trains the manifest's scalar network on (coords -> values).
ScalarFit fit_scalar_field(const io::ExperimentManifest& manifest,
                           const Eigen::MatrixXd& coords,
                           const Eigen::MatrixXd& values);

/// Evaluates a scalar field (software) on a pixel/voxel grid; z in [0,1]
/// selects the slice for volumes.
Eigen::MatrixXd eval_scalar_image(const net::FieldNetwork& network,
                                  const enc::Encoder& encoder, int width,
                                  int height, double z = -1.0);
Eigen::MatrixXd eval_scalar_image_hw(const deploy::DeployedNetwork& network,
                                     const enc::Encoder& encoder, int width,
                                     int height, Rng& rng, double z = -1.0);

/// Deploys a trained checkpoint onto simulated crossbars, writing mapping
/// manifests, conductance snapshots, and hardware metrics (scalar-field
/// tasks: image-fit, ct-dense, ct-sparse).
void run_deploy(const io::ExperimentManifest& manifest,
                const std::string& checkpoint_path);

/// Renders reconstructions/views from a checkpoint with the software or
/// hardware backend.
void run_render(const io::ExperimentManifest& manifest,
                const std::string& checkpoint_path, const std::string& backend);

/// Checks that every artifact under the directory embeds the hash of the
/// directory's manifest.json; returns the number of offending files.
int verify_outputs(const std::string& dir);

/// RGB radiance training through the volumetric renderer.
struct RadianceScene {
  const io::SyntheticScene* scene = nullptr;
  int samples_per_ray = 32;
  int rays_per_step = 256;
};
void train_radiance(net::FieldNetwork& nerf, const enc::Encoder& pos_enc,
                    const enc::Encoder& view_enc, const RadianceScene& rs,
                    const net::TrainConfig& cfg, const Eigen::Vector3d& bg);

/// Joint deformation + canonical training on a dynamic scene.
void train_dnerf(net::FieldNetwork& canonical, net::FieldNetwork& deform,
                 const enc::Encoder& xt_enc, const enc::Encoder& view_enc,
                 const RadianceScene& rs, const net::TrainConfig& cfg,
                 const Eigen::Vector3d& bg);

}  // namespace memfield::pipeline
