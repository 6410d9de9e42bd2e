#pragma once

#include <string>

#include <nlohmann/json_fwd.hpp>

#include "interpeq/model.hpp"

namespace interpeq {

// Model JSON schema:
//   {"variables":[{"id","arity","kind"}],
//    "transitions":[{"target","parents":[...],"op":{...}}],
//    "order":[ids]}
// op carries "kind" from the evaluator whitelist plus inline numeric params.
// Doubles survive load(save(m)) bit-exactly (shortest round-trip printing).
// Lambda-backed models are not serializable and raise UnsupportedOp.
nlohmann::json model_to_json(const CausalModel& model);
CausalModel model_from_json(const nlohmann::json& j);
void save_model(const CausalModel& model, const std::string& path);
CausalModel load_model(const std::string& path);

nlohmann::json task_to_json(const Task& task);
Task task_from_json(const nlohmann::json& j);
void save_task(const Task& task, const std::string& path);
Task load_task(const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

// FNV-1a 64-bit content hash, reported in run manifests.
std::string content_hash(const std::string& bytes);

}  // namespace interpeq
