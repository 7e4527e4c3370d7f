#include "sttk/manifest.hpp"

#include <fstream>
#include <sstream>

#include "sttk/errors.hpp"

namespace sttk {

namespace {

constexpr const char* kHeader = "id\tfeatures\tn_frames\ttranscript\ttranslation";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, '\t')) fields.push_back(field);
  if (!line.empty() && line.back() == '\t') fields.emplace_back();
  return fields;
}

}  // namespace

std::filesystem::path Manifest::resolve(const ManifestEntry& e) const {
  std::filesystem::path p(e.features);
  return p.is_absolute() ? p : base_dir / p;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line) || line != kHeader) {
    throw ManifestError(path.string() + ": missing header '" + std::string(kHeader) + "'");
  }
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 5) {
      throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields, got " +
                          std::to_string(fields.size()));
    }
    ManifestEntry e{fields[0], fields[1], std::nullopt, fields[3], fields[4]};
    if (!fields[2].empty()) {
      try {
        size_t used = 0;
        const unsigned long v = std::stoul(fields[2], &used);
        if (used != fields[2].size()) throw std::invalid_argument("trailing");
        e.n_frames = v;
      } catch (const std::exception&) {
        throw ManifestError(path.string() + ":" + std::to_string(lineno) + ": bad n_frames '" +
                            fields[2] + "'");
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw ManifestError("cannot write manifest " + path.string());
  out << kHeader << '\n';
  for (const auto& e : entries) {
    out << e.id << '\t' << e.features << '\t';
    if (e.n_frames) out << *e.n_frames;
    out << '\t' << e.transcript << '\t' << e.translation << '\n';
  }
}

}  // namespace sttk
