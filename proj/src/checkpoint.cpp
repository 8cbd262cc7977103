#include "didfuse/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace didfuse {
namespace {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[off + i])) << (8 * i);
  return v;
}

json shape_json(const Shape& s) { return json::array({s.n, s.c, s.h, s.w}); }

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
  const auto& p = ckpt.params;
  json header;
  header["width"] = p.arch.width;
  header["skip_mode"] = to_string(p.arch.skip_mode);
  header["has_base"] = p.arch.has_base;
  header["has_detail"] = p.arch.has_detail;
  header["bn"] = {{"eps", p.bn_eps}, {"momentum", p.bn_momentum}};
  header["loss"] = {{"alpha1", ckpt.loss.alpha1}, {"alpha2", ckpt.loss.alpha2}, {"alpha3", ckpt.loss.alpha3},
                    {"alpha4", ckpt.loss.alpha4}, {"lambda", ckpt.loss.lambda},
                    {"variant", to_string(ckpt.loss.variant)}, {"reduction", to_string(ckpt.loss.reduction)}};
  header["info"] = ckpt.info;
  json params = json::array();
  std::string blob;
  for (const auto& [name, t] : p.named_tensors()) {
    params.push_back({{"name", name}, {"shape", shape_json(t->shape())}});
    const auto data = t->data();
    blob.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(float));
  }
  header["params"] = params;
  const std::string text = header.dump();

  std::string out = "DIDF";
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out += blob;
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "DIDF") != 0) throw CheckpointError("not a checkpoint (bad magic)");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t hlen = get_u32(bytes, 8);
  if (bytes.size() < 12 + static_cast<std::size_t>(hlen)) throw CheckpointError("checkpoint header is truncated");
  json header;
  try {
    header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + hlen);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    Architecture arch;
    arch.width = header.at("width").get<std::size_t>();
    arch.skip_mode = parse_skip_mode(header.at("skip_mode").get<std::string>());
    arch.has_base = header.at("has_base").get<bool>();
    arch.has_detail = header.at("has_detail").get<bool>();
    ck.params = init_params<float>(arch, 0);
    ck.params.bn_eps = header.at("bn").at("eps").get<float>();
    ck.params.bn_momentum = header.at("bn").at("momentum").get<float>();
    const json& l = header.at("loss");
    ck.loss.alpha1 = l.at("alpha1").get<double>();
    ck.loss.alpha2 = l.at("alpha2").get<double>();
    ck.loss.alpha3 = l.at("alpha3").get<double>();
    ck.loss.alpha4 = l.at("alpha4").get<double>();
    ck.loss.lambda = l.at("lambda").get<double>();
    ck.loss.variant = parse_loss_variant(l.at("variant").get<std::string>());
    ck.loss.reduction = parse_reduction(l.at("reduction").get<std::string>());
    if (header.contains("info")) ck.info = header.at("info").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("incomplete checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("invalid checkpoint header: ") + e.what());
  }

  auto slots = ck.params.named_tensors();
  const json& listed = header.at("params");
  if (listed.size() != slots.size())
    throw CheckpointError("checkpoint lists " + std::to_string(listed.size()) + " tensors, the architecture needs " +
                          std::to_string(slots.size()));
  std::size_t expected = 0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    const auto& [name, t] = slots[i];
    if (listed[i].at("name").get<std::string>() != name)
      throw CheckpointError("tensor " + std::to_string(i) + " is '" + listed[i].at("name").get<std::string>() +
                            "', expected '" + name + "'");
    if (listed[i].at("shape") != shape_json(t->shape()))
      throw CheckpointError("tensor " + name + " has shape " + listed[i].at("shape").dump() + ", the width-" +
                            std::to_string(ck.params.arch.width) + " channel plan needs " + to_string(t->shape()));
    expected += t->numel() * sizeof(float);
  }
  const std::size_t have = bytes.size() - 12 - hlen;
  if (have != expected)
    throw CheckpointError("parameter blob holds " + std::to_string(have) + " bytes, the header's channel plan needs " +
                          std::to_string(expected) + (have < expected ? " (truncated)" : ""));
  std::size_t off = 12 + hlen;
  for (auto& [name, t] : slots) {
    auto data = t->data();
    std::memcpy(data.data(), bytes.data() + off, data.size() * sizeof(float));
    off += data.size() * sizeof(float);
  }
  return ck;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw CheckpointError("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace didfuse
