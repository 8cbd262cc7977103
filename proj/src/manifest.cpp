#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "didfuse/io.hpp"

namespace didfuse {
namespace fs = std::filesystem;

bool is_image_file(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e == ".png" || e == ".pgm" || e == ".ppm";
}

namespace {

std::map<std::string, fs::path> images_by_stem(const fs::path& dir, std::vector<std::string>& warnings) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    const std::string stem = entry.path().stem().string();
    auto [it, fresh] = out.emplace(stem, entry.path());
    if (!fresh) {
      // Keep the lexicographically first file so the result is independent of
      // directory iteration order.
      warnings.push_back("duplicate stem '" + stem + "' in " + dir.string());
      if (entry.path() < it->second) it->second = entry.path();
    }
  }
  return out;
}

}  // namespace

PairManifest build_manifest(const fs::path& ir_dir, const fs::path& vis_dir) {
  PairManifest m;
  const auto ir = images_by_stem(ir_dir, m.warnings);
  const auto vis = images_by_stem(vis_dir, m.warnings);
  for (const auto& [stem, path] : ir) {
    auto it = vis.find(stem);
    if (it == vis.end()) {
      m.warnings.push_back("infrared image '" + stem + "' has no visible counterpart; skipped");
      continue;
    }
    m.pairs.push_back({stem, path, it->second});
  }
  for (const auto& [stem, path] : vis)
    if (!ir.count(stem)) m.warnings.push_back("visible image '" + stem + "' has no infrared counterpart; skipped");
  if (m.pairs.empty()) throw IoError("no matching image stems between " + ir_dir.string() + " and " + vis_dir.string());
  return m;
}

PairManifest read_manifest(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open manifest " + file.string());
  const fs::path base = file.has_parent_path() ? file.parent_path() : fs::path(".");
  PairManifest m;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 3)
      throw IoError(file.string() + ":" + std::to_string(lineno) + ": expected id<TAB>ir_path<TAB>vis_path");
    if (!seen.insert(fields[0]).second) throw IoError(file.string() + ": duplicate id '" + fields[0] + "'");
    auto resolve = [&](const std::string& s) {
      fs::path p(s);
      return p.is_absolute() ? p : base / p;
    };
    PairEntry e{fields[0], resolve(fields[1]), resolve(fields[2])};
    for (const fs::path* p : {&e.ir, &e.vis})
      if (!fs::exists(*p)) throw IoError(file.string() + ": missing file " + p->string());
    m.pairs.push_back(std::move(e));
  }
  if (m.pairs.empty()) throw IoError("manifest " + file.string() + " lists no pairs");
  return m;
}

void write_manifest(const PairManifest& m, const fs::path& file) {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw IoError("cannot write manifest " + file.string());
  for (const auto& p : m.pairs) out << p.id << '\t' << fs::absolute(p.ir).string() << '\t' << fs::absolute(p.vis).string() << '\n';
}

}  // namespace didfuse
