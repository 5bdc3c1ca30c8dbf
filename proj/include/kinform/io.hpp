#pragma once

// File formats for datasets.
//
//   family tree   family_id<TAB>member_id<TAB>role<TAB>image_path[;image_path...]
//   pair list     image_a,image_b,class,label      (optional header row)
//   images        binary PPM (P6, maxval 255) or a KTNS embedding sidecar (.ktns)
//
// Relative image paths resolve against the directory of the listing file.

#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kinform/dataset.hpp"
#include "kinform/serialize.hpp"

namespace kinform::io {

namespace fs = std::filesystem;

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// ---------------------------------------------------------------------------
// PPM

inline void write_ppm(const fs::path& path, const PixelImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

inline PixelImage read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  auto token = [&]() {
    std::string t;
    char c;
    while (is.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(is, skip);
      } else if (!std::isspace(static_cast<unsigned char>(c))) {
        t.push_back(c);
        break;
      }
    }
    while (is.get(c) && !std::isspace(static_cast<unsigned char>(c))) t.push_back(c);
    return t;
  };
  if (token() != "P6") throw DatasetError(path.string() + ": not a binary PPM (P6)");
  PixelImage img;
  try {
    img.width = static_cast<std::uint32_t>(std::stoul(token()));
    img.height = static_cast<std::uint32_t>(std::stoul(token()));
    if (std::stoul(token()) != 255) throw DatasetError(path.string() + ": only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw DatasetError(path.string() + ": malformed PPM header");
  }
  if (img.width == 0 || img.height == 0) throw DatasetError(path.string() + ": empty image");
  img.pixels.resize(std::size_t{img.width} * img.height * 3);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()))) {
    throw DatasetError(path.string() + ": truncated pixel payload");
  }
  return img;
}

inline void write_embedding(const fs::path& path, const std::vector<Real>& e) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  binary::write_tensor(os, Tensor::vector(e));
}

inline std::vector<Real> read_embedding(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path.string());
  Tensor t = binary::read_tensor(is);
  return {t.data().begin(), t.data().end()};
}

inline ImageRecord load_image(const fs::path& path) {
  ImageRecord rec;
  rec.path = path.string();
  if (path.extension() == ".ktns") {
    rec.embedding = read_embedding(path);
  } else {
    rec.pixels = read_ppm(path);
  }
  return rec;
}

namespace detail {

inline void require_files(const std::vector<fs::path>& paths) {
  std::vector<std::string> missing;
  for (const auto& p : paths)
    if (!fs::is_regular_file(p)) missing.push_back(p.string());
  if (!missing.empty()) {
    std::string msg = "missing image files (" + std::to_string(missing.size()) + "):";
    for (const auto& m : missing) msg += "\n  " + m;
    throw DatasetError(msg);
  }
}

inline std::ifstream open_text(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  return is;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Family tree

inline Dataset load_family_tree(const fs::path& path) {
  auto is = detail::open_text(path);
  const fs::path base = path.parent_path();
  Dataset ds;
  std::map<std::string, std::size_t> family_index;
  std::set<std::string> member_ids;
  std::vector<fs::path> image_paths;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cols = split(t, '\t');
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (cols.size() != 4) throw DatasetError(where + "expected 4 tab-separated columns, got " + std::to_string(cols.size()));
    if (cols[0].empty() || cols[1].empty()) throw DatasetError(where + "empty family or member id");
    if (!member_ids.insert(cols[1]).second) throw DatasetError(where + "duplicate member id '" + cols[1] + "'");
    Role role;
    try {
      role = parse_role(cols[2]);
    } catch (const DatasetError& e) {
      throw DatasetError(where + e.what());
    }
    auto [it, inserted] = family_index.emplace(cols[0], ds.families.size());
    if (inserted) ds.families.push_back({cols[0], {}});
    Member mem{cols[1], it->second, role, {}};
    for (const auto& p : split(cols[3], ';')) {
      const std::string rel = trim(p);
      if (rel.empty()) continue;
      fs::path full = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
      mem.images.push_back(image_paths.size());
      image_paths.push_back(full);
    }
    if (mem.images.empty()) throw DatasetError(where + "member '" + cols[1] + "' has no images");
    ds.families[it->second].members.push_back(ds.members.size());
    ds.members.push_back(std::move(mem));
  }
  detail::require_files(image_paths);
  ds.images.reserve(image_paths.size());
  for (const auto& p : image_paths) ds.images.push_back(load_image(p));
  ds.validate();
  return ds;
}

/// Writes `dir/families.tsv` and one image file per record under `dir/images`.
inline fs::path write_family_tree(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir / "images");
  const fs::path listing = dir / "families.tsv";
  std::ofstream os(listing);
  if (!os) throw IoError("cannot write " + listing.string());
  for (const Member& m : ds.members) {
    os << ds.families[m.family].id << '\t' << m.id << '\t' << role_tag(m.role) << '\t';
    for (std::size_t k = 0; k < m.images.size(); ++k) {
      const ImageRecord& rec = ds.images[m.images[k]];
      const std::string name = m.id + "_" + std::to_string(k + 1) + (rec.is_embedding() ? ".ktns" : ".ppm");
      const fs::path rel = fs::path("images") / name;
      if (rec.is_embedding()) {
        write_embedding(dir / rel, *rec.embedding);
      } else {
        write_ppm(dir / rel, *rec.pixels);
      }
      os << (k ? ";" : "") << rel.generic_string();
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing " + listing.string());
  return listing;
}

// ---------------------------------------------------------------------------
// Pair lists

struct PairList {
  Dataset images;  // image store only
  std::vector<PairSample> pairs;
};

inline PairList load_pair_list(const fs::path& path) {
  auto is = detail::open_text(path);
  const fs::path base = path.parent_path();
  PairList out;
  std::map<std::string, std::size_t> index;
  std::vector<fs::path> image_paths;
  auto image_id = [&](const std::string& rel) {
    fs::path full = fs::path(rel).is_absolute() ? fs::path(rel) : base / rel;
    auto [it, inserted] = index.emplace(full.string(), image_paths.size());
    if (inserted) image_paths.push_back(full);
    return it->second;
  };
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto cols = split(t, ',');
    const auto where = path.string() + ":" + std::to_string(lineno) + ": ";
    if (lineno == 1 && !cols.empty() && trim(cols[0]) == "image_a") continue;
    if (cols.size() != 4) throw DatasetError(where + "expected image_a,image_b,class,label");
    PairSample p;
    try {
      p.cls = parse_class(trim(cols[2]));
    } catch (const DatasetError& e) {
      throw DatasetError(where + e.what());
    }
    const std::string label = trim(cols[3]);
    if (label != "0" && label != "1") throw DatasetError(where + "label must be 0 or 1, got '" + label + "'");
    p.positive = label == "1";
    const std::string a = trim(cols[0]), b = trim(cols[1]);
    if (a.empty() || b.empty()) throw DatasetError(where + "empty image path");
    p.image_a = image_id(a);
    p.image_b = image_id(b);
    out.pairs.push_back(p);
  }
  detail::require_files(image_paths);
  for (const auto& p : image_paths) out.images.images.push_back(load_image(p));
  return out;
}

/// Writes a pair list for `pairs` over images already stored at `image_paths`
/// (relative to the list's directory or absolute).
inline void write_pair_list(const fs::path& path, const std::vector<PairSample>& pairs,
                            const std::vector<std::string>& image_paths) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << "image_a,image_b,class,label\n";
  for (const auto& p : pairs) {
    os << image_paths.at(p.image_a) << ',' << image_paths.at(p.image_b) << ',' << class_tag(p.cls) << ','
       << (p.positive ? 1 : 0) << '\n';
  }
}

}  // namespace kinform::io
