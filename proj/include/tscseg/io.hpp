#pragma once

#include "tscseg/core.hpp"
#include "tscseg/online.hpp"
#include "tscseg/pipeline.hpp"
#include "tscseg/simgen.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tscseg {

namespace fs = std::filesystem;

std::string read_file(const fs::path& path);
/// Writes to a sibling temporary file and renames it over `path`.
void atomic_write(const fs::path& path, std::string_view content);

/// Header: t,px,py,pz,vx,vy,vz,wx,wy,wz,qw,qx,qy,qz,g,f000..f{D-1}
std::string demo_csv_header(std::size_t visual_dim);
std::string format_demo_csv(const Demonstration& demo);
/// Parses and ingests; `expected_visual_dim` of 0 accepts any width.
Demonstration parse_demo_csv(std::string_view text, const std::string& id, double sample_rate_hz,
                             std::size_t expected_visual_dim = 0, const std::string& source = "<memory>");
Demonstration read_demo_csv(const fs::path& path, const std::string& id, double sample_rate_hz,
                            std::size_t expected_visual_dim = 0);

/// Sidecar labels: t,segment_label
std::string format_annotations_csv(const SegmentTrack& track);
SegmentTrack parse_annotations_csv(std::string_view text, const std::string& source = "<memory>");

nlohmann::json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);

struct Dataset {
    DatasetManifest manifest;
    std::vector<Demonstration> demos;  // manifest order, annotations attached when listed

    std::vector<Demonstration> subset(const std::vector<std::string>& ids) const;
    std::vector<Demonstration> train() const { return subset(manifest.train); }
    std::vector<Demonstration> test() const { return subset(manifest.test); }
};

/// Writes manifest.json, one CSV per demo, label sidecars and directives.json.
void write_dataset(const SimDataset& ds, const fs::path& dir);
Dataset load_dataset(const fs::path& dir);

/// Every field is optional; absent fields keep their defaults. A top-level
/// "gmm" section applies to both clustering levels before the per-level
/// "tsc.visual_gmm" / "tsc.kinematic_gmm" overrides.
TrainConfig train_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& c);

/// {"T1": {"target_orientation": [w,x,y,z], "gripper_command": "close"}, "T4": null, "T5": "none"}
DirectiveMap directives_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DirectiveMap& m);

std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle deserialize_bundle(std::string_view text);
void save_bundle(const ModelBundle& bundle, const fs::path& path);
ModelBundle load_bundle(const fs::path& path);

nlohmann::json hierarchy_report(const TransitionHierarchy& h);

std::string base64_encode(std::string_view bytes);
std::string base64_decode(std::string_view text);

}  // namespace tscseg
