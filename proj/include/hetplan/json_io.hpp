// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hetplan/core_model.hpp"
#include "hetplan/gradcheck.hpp"
#include "hetplan/perf_models.hpp"

namespace hetplan {

using Json = nlohmann::ordered_json;

// Documents are strict: unknown or missing required fields raise ParseError;
// semantically invalid content raises ValidationError.
ClusterSpec cluster_from_json(const Json& doc);
Json cluster_to_json(const ClusterSpec& cluster);

ModelSpec model_from_json(const Json& doc);
Json model_to_json(const ModelSpec& model);

ProfileDocument profile_from_json(const Json& doc);
Json profile_to_json(const ProfileDocument& profile);

// A profile file holds one profile object or an array of them.
std::vector<ProfileDocument> profiles_from_json(const Json& doc);

PerfModelSet perf_from_json(const Json& doc);
Json perf_to_json(const PerfModelSet& perf);

TrainPlan plan_from_json(const Json& doc);
Json plan_to_json(const TrainPlan& plan);

Json unit_shards_to_json(const UnitShardPlan& shards, const std::vector<GpuSpec>& gpus);
UnitShardPlan unit_shards_from_json(const Json& doc);

GradFixture grad_fixture_from_json(const Json& doc);
Json grad_fixture_to_json(const GradFixture& fixture);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const Json& doc);

// load + validate; profile keys must resolve against `known_profile_keys`
// when that list is non-empty.
ClusterSpec load_cluster(const std::filesystem::path& path,
                         const std::vector<std::string>& known_profile_keys = {});
ModelSpec load_model(const std::filesystem::path& path);
std::vector<ProfileDocument> load_profiles(const std::filesystem::path& path);
PerfModelSet load_perf(const std::filesystem::path& path);
TrainPlan load_plan(const std::filesystem::path& path);

// Every GPU's profile_key must exist in `perf`.
void check_profile_keys(const ClusterSpec& cluster, const PerfModelSet& perf);

}  // namespace hetplan
