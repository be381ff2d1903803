#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "dldl/envmodel.hpp"
#include "dldl/image.hpp"
#include "dldl/labelspace.hpp"
#include "dldl/normalize.hpp"

namespace dldl {

struct IndexRow {
    std::string image_path;  // relative to the index file's directory
    std::string dataset_id;
    env::Date recording_date{};
    std::optional<double> ds_label;  // 0..10 when present
    double gdd = 0.0;
    double npg = 0.0;
};

struct DatasetIndex {
    std::vector<IndexRow> rows;

    void validate() const;
};

// CSV: image_path,dataset_id,recording_date,ds_label,gdd,npg
// (empty ds_label allowed at pretrain)
DatasetIndex load_index_csv(const std::string& path);
void save_index_csv(const DatasetIndex& index, const std::string& path);

enum class LabelKind { kDs, kGdd, kNpg };

LabelKind parse_label_kind(const std::string& name);
std::string label_kind_name(LabelKind kind);

// Raw label value of a row; throws when ds is requested but absent.
double label_value(const IndexRow& row, LabelKind kind);

// Sampler cell id: ds rounds to the integer class 0..10, gdd/npg bin into the
// label space.
long binned_label(const IndexRow& row, LabelKind kind, const LabelSpace& space);

// Loads plant images, normalizes them once, and keeps them in memory. When
// DLDL_CACHE_DIR is set, normalized rasters are also cached on disk.
class ImageStore {
public:
    ImageStore(std::string root, NormVariant variant);

    const MultispectralImage& get(const std::string& relative_path);
    NormVariant variant() const { return variant_; }

private:
    std::string root_;
    NormVariant variant_;
    std::string disk_cache_dir_;  // empty when disabled
    std::unordered_map<std::string, MultispectralImage> cache_;
};

}  // namespace dldl
