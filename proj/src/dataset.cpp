#include "dldl/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>

namespace dldl {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

void DatasetIndex::validate() const {
    // every row of one dataset_id + date shares gdd/npg
    std::map<std::pair<std::string, std::string>, std::pair<double, double>> seen;
    for (const auto& row : rows) {
        if (row.image_path.empty()) throw DataError("index row with empty image_path");
        if (row.ds_label && (*row.ds_label < 0.0 || *row.ds_label > 10.0))
            throw DataError("ds_label out of [0,10] for " + row.image_path);
        auto key = std::make_pair(row.dataset_id, env::format_date(row.recording_date));
        auto it = seen.find(key);
        if (it == seen.end()) {
            seen.emplace(key, std::make_pair(row.gdd, row.npg));
        } else if (it->second.first != row.gdd || it->second.second != row.npg) {
            throw DataError("rows of dataset " + row.dataset_id + " date " + key.second +
                            " disagree on gdd/npg");
        }
    }
}

DatasetIndex load_index_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open index file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError("empty index file '" + path + "'");
    if (line.ends_with('\r')) line.pop_back();
    if (line != "image_path,dataset_id,recording_date,ds_label,gdd,npg")
        throw DataError("unexpected index CSV header in '" + path + "': " + line);
    DatasetIndex index;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.ends_with('\r')) line.pop_back();
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != 6)
            throw DataError(path + ":" + std::to_string(lineno) + ": expected 6 fields, got " +
                            std::to_string(fields.size()));
        IndexRow row;
        try {
            row.image_path = fields[0];
            row.dataset_id = fields[1];
            row.recording_date = env::parse_date(fields[2]);
            if (!fields[3].empty()) row.ds_label = std::stod(fields[3]);
            row.gdd = std::stod(fields[4]);
            row.npg = std::stod(fields[5]);
        } catch (const std::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
        index.rows.push_back(std::move(row));
    }
    index.validate();
    return index;
}

void save_index_csv(const DatasetIndex& index, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write index file '" + path + "'");
    out << "image_path,dataset_id,recording_date,ds_label,gdd,npg\n";
    char buf[64];
    for (const auto& row : index.rows) {
        out << row.image_path << ',' << row.dataset_id << ',' << env::format_date(row.recording_date) << ',';
        if (row.ds_label) {
            std::snprintf(buf, sizeof(buf), "%.12g", *row.ds_label);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.12g,%.12g\n", row.gdd, row.npg);
        out << buf;
    }
}

LabelKind parse_label_kind(const std::string& name) {
    if (name == "ds") return LabelKind::kDs;
    if (name == "gdd") return LabelKind::kGdd;
    if (name == "npg") return LabelKind::kNpg;
    throw ConfigError("unknown label '" + name + "' (expected ds, gdd, or npg)");
}

std::string label_kind_name(LabelKind kind) {
    switch (kind) {
        case LabelKind::kDs: return "ds";
        case LabelKind::kGdd: return "gdd";
        case LabelKind::kNpg: return "npg";
    }
    throw ConfigError("unknown label kind");
}

double label_value(const IndexRow& row, LabelKind kind) {
    switch (kind) {
        case LabelKind::kDs:
            if (!row.ds_label) throw DataError("row '" + row.image_path + "' has no ds_label");
            return *row.ds_label;
        case LabelKind::kGdd: return row.gdd;
        case LabelKind::kNpg: return row.npg;
    }
    throw ConfigError("unknown label kind");
}

long binned_label(const IndexRow& row, LabelKind kind, const LabelSpace& space) {
    if (kind == LabelKind::kDs) return std::lround(label_value(row, kind));
    return space.bin_of(label_value(row, kind));
}

namespace {

std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

ImageStore::ImageStore(std::string root, NormVariant variant) : root_(std::move(root)), variant_(variant) {
    if (const char* dir = std::getenv("DLDL_CACHE_DIR"); dir != nullptr && dir[0] != '\0') {
        disk_cache_dir_ = dir;
        std::error_code ec;
        std::filesystem::create_directories(disk_cache_dir_, ec);
        if (ec) disk_cache_dir_.clear();
    }
}

const MultispectralImage& ImageStore::get(const std::string& relative_path) {
    auto it = cache_.find(relative_path);
    if (it != cache_.end()) return it->second;

    std::string full = root_.empty() ? relative_path : root_ + "/" + relative_path;
    std::string cache_file;
    if (!disk_cache_dir_.empty()) {
        cache_file = disk_cache_dir_ + "/" + fnv1a_hex(full + "|" + norm_variant_name(variant_)) + ".img";
        if (std::filesystem::exists(cache_file)) {
            auto [pos, ok] = cache_.emplace(relative_path, load_image(cache_file));
            return pos->second;
        }
    }
    MultispectralImage img = normalize(load_image(full), variant_);
    if (!cache_file.empty()) save_image(img, cache_file);
    auto [pos, ok] = cache_.emplace(relative_path, std::move(img));
    return pos->second;
}

}  // namespace dldl
