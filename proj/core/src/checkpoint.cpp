#include "softcbm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"

namespace softcbm {

static_assert(std::endian::native == std::endian::little, "checkpoint payloads assume a little-endian host");

std::filesystem::path checkpoint_manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".manifest");
}

void save_checkpoint(const Model& model, const std::filesystem::path& path, bool include_heads) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "softcbm-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "f32le";
  manifest["fingerprint"] = model.fingerprint();
  manifest["include_heads"] = include_heads;

  std::string payload;
  auto& tensors = manifest["tensors"] = nlohmann::ordered_json::array();
  for (const auto* p : model.parameters()) {
    const std::string group = parameter_group(p->name);
    if (!include_heads && (group == "concept_head" || group == "task_head")) continue;
    const std::size_t bytes = p->value.size() * sizeof(float);
    tensors.push_back({{"name", p->name}, {"shape", p->value.shape()}, {"offset", payload.size()}, {"bytes", bytes}});
    payload.append(reinterpret_cast<const char*>(p->value.data()), bytes);
  }
  manifest["payload_bytes"] = payload.size();
  manifest["crc32"] = crc32_bytes(std::as_bytes(std::span(payload.data(), payload.size())));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_text_file(path, payload);
  write_text_file(checkpoint_manifest_path(path), manifest.dump(2) + "\n");
}

namespace {

struct Entry {
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t bytes = 0;
};

}  // namespace

LoadReport load_checkpoint(Model& model, const std::filesystem::path& path, bool strict) {
  const std::string manifest_text = read_text_file(checkpoint_manifest_path(path));
  const std::string payload = read_text_file(path);

  LoadReport report;
  std::map<std::string, Entry> entries;
  std::vector<std::string> order;
  try {
    const auto m = nlohmann::json::parse(manifest_text);
    if (m.at("format").get<std::string>() != "softcbm-checkpoint") throw FormatError("not a checkpoint manifest");
    if (m.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported checkpoint dtype");
    report.fingerprint = m.at("fingerprint").get<std::string>();
    if (m.at("payload_bytes").get<std::size_t>() != payload.size())
      throw FormatError("checkpoint payload has " + std::to_string(payload.size()) + " bytes, manifest expects " +
                        std::to_string(m.at("payload_bytes").get<std::size_t>()));
    if (m.at("crc32").get<std::uint32_t>() != crc32_bytes(std::as_bytes(std::span(payload.data(), payload.size()))))
      throw CorruptionError("checkpoint payload checksum mismatch");
    for (const auto& t : m.at("tensors")) {
      Entry e{t.at("shape").get<std::vector<int>>(), t.at("offset").get<std::size_t>(), t.at("bytes").get<std::size_t>()};
      if (e.offset + e.bytes > payload.size() || e.bytes != Tensor<float>::count(e.shape) * sizeof(float))
        throw FormatError("checkpoint tensor extent is inconsistent");
      const std::string name = t.at("name").get<std::string>();
      order.push_back(name);
      entries[name] = std::move(e);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint manifest: ") + e.what());
  }

  std::map<std::string, bool> seen;
  for (auto* p : model.parameters()) {
    auto it = entries.find(p->name);
    if (it == entries.end()) {
      report.missing.push_back(p->name);
      continue;
    }
    seen[p->name] = true;
    if (it->second.shape != p->value.shape())
      report.mismatched.push_back(p->name);
    else
      report.matched.push_back(p->name);
  }
  for (const auto& name : order)
    if (!seen.count(name)) report.unexpected.push_back(name);

  if (strict && !report.clean()) {
    std::string msg = "strict checkpoint load failed:";
    if (!report.missing.empty()) msg += " missing " + std::to_string(report.missing.size()) + " (first " + report.missing[0] + ")";
    if (!report.unexpected.empty()) msg += " unexpected " + std::to_string(report.unexpected.size()) + " (first " + report.unexpected[0] + ")";
    if (!report.mismatched.empty()) msg += " shape mismatch " + std::to_string(report.mismatched.size()) + " (first " + report.mismatched[0] + ")";
    throw LoadError(msg);
  }

  std::map<std::string, nn::Parameter<float>*> by_name;
  for (auto* p : model.parameters()) by_name[p->name] = p;
  for (const auto& name : report.matched) {
    const Entry& e = entries.at(name);
    std::memcpy(by_name.at(name)->value.data(), payload.data() + e.offset, e.bytes);
  }
  return report;
}

}  // namespace softcbm
