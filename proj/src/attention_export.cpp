#include "skipvision/attention_export.hpp"

#include <json.hpp>

#include <bit>
#include <fstream>
#include <stdexcept>

namespace skipvision {

static_assert(std::endian::native == std::endian::little, "attention maps are written little-endian");

ExportedMap write_attention_map(const AttentionMap& map, const std::filesystem::path& dir,
                                const std::string& stem) {
  std::filesystem::create_directories(dir);
  ExportedMap out{dir / (stem + ".f32"), dir / (stem + ".json")};

  std::ofstream bin(out.binary, std::ios::binary);
  bin.write(reinterpret_cast<const char*>(map.weights.data()),
            static_cast<std::streamsize>(map.weights.size() * sizeof(float)));
  if (!bin) throw std::runtime_error("cannot write " + out.binary.string());

  nlohmann::json j;
  j["layer"] = map.layer;
  j["heads"] = map.heads;
  j["shape"] = {map.heads, map.queries, map.keys};
  j["layout"] = "head,query,key";
  j["dtype"] = "float32";
  j["byte_order"] = "little";
  j["binary"] = out.binary.filename().string();
  auto& roles = j["key_roles"] = nlohmann::json::array();
  auto& provenance = j["key_provenance"] = nlohmann::json::array();
  auto& positions = j["key_positions"] = nlohmann::json::array();
  for (const auto& t : map.key_tags) {
    roles.push_back(std::string(to_string(t.role)));
    provenance.push_back(t.provenance.label());
    positions.push_back(t.position);
  }
  j["query_positions"] = map.query_positions;
  std::ofstream side(out.sidecar);
  side << j.dump(2) << '\n';
  if (!side) throw std::runtime_error("cannot write " + out.sidecar.string());
  return out;
}

AttentionMap read_attention_map(const std::filesystem::path& sidecar) {
  std::ifstream in(sidecar);
  if (!in) throw std::runtime_error("cannot open " + sidecar.string());
  const auto j = nlohmann::json::parse(in);
  AttentionMap map;
  map.layer = j.at("layer");
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw std::runtime_error("attention map: shape must have 3 entries");
  map.heads = shape[0];
  map.queries = shape[1];
  map.keys = shape[2];
  const auto roles = j.at("key_roles").get<std::vector<std::string>>();
  const auto prov = j.at("key_provenance").get<std::vector<std::string>>();
  const auto pos = j.at("key_positions").get<std::vector<std::size_t>>();
  for (std::size_t i = 0; i < roles.size(); ++i) {
    map.key_tags.push_back({pos.at(i), parse_token_role(roles[i]), Provenance::parse(prov.at(i))});
  }
  map.query_positions = j.at("query_positions").get<std::vector<std::size_t>>();

  const auto bin_path = sidecar.parent_path() / j.at("binary").get<std::string>();
  std::ifstream bin(bin_path, std::ios::binary);
  map.weights.resize(map.heads * map.queries * map.keys);
  bin.read(reinterpret_cast<char*>(map.weights.data()),
           static_cast<std::streamsize>(map.weights.size() * sizeof(float)));
  if (!bin) throw std::runtime_error("attention map: short read from " + bin_path.string());
  return map;
}

}  // namespace skipvision
