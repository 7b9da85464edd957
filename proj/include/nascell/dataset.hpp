#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "nascell/dynamic_image.hpp"
#include "nascell/errors.hpp"
#include "nascell/image.hpp"
#include "nascell/rng.hpp"
#include "nascell/tensor.hpp"

namespace nascell {

enum class SampleKind { Image, Video };

/// One catalogued sample: an image file (macro expressions) or an ordered
/// frame directory (micro expressions, collapsed to a dynamic image on load).
struct ManifestEntry {
    std::string subject;
    int label = -1;
    std::vector<std::string> paths; // 1 file for images, >=1 ordered frames for videos
};

struct DatasetManifest {
    std::string root;
    SampleKind kind = SampleKind::Image;
    std::vector<std::string> classes;
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }

    std::vector<std::string> subjects() const {
        std::vector<std::string> out;
        for (const auto& e : entries) out.push_back(e.subject);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }
};

namespace detail {

inline std::vector<std::filesystem::path> sorted_children(const std::filesystem::path& dir) {
    std::vector<std::filesystem::path> out;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) out.push_back(entry.path());
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    return out;
}

inline bool is_supported_image(const std::filesystem::path& p) {
    const std::string ext = p.extension().string();
    return ext == ".pgm" || ext == ".ppm";
}

} // namespace detail

/// Scans `root/<subject>/<class>/<sample>` into a manifest with lexicographic
/// ordering. A sample that is a regular file is an image; a directory is an
/// ordered frame sequence. Image and video samples cannot be mixed.
inline DatasetManifest ingest(const std::string& root, const std::vector<std::string>& classes) {
    namespace fs = std::filesystem;
    if (classes.empty()) throw DataError("ingest: class table is empty");
    if (!fs::is_directory(root)) throw DataError("ingest: dataset root not found: " + root);

    std::map<std::string, int> class_index;
    for (std::size_t i = 0; i < classes.size(); ++i)
        class_index[classes[i]] = static_cast<int>(i);

    DatasetManifest m;
    m.root = root;
    m.classes = classes;
    bool kind_known = false;

    for (const fs::path& subject_dir : detail::sorted_children(root)) {
        if (!fs::is_directory(subject_dir)) continue;
        const std::string subject = subject_dir.filename().string();
        for (const fs::path& class_dir : detail::sorted_children(subject_dir)) {
            if (!fs::is_directory(class_dir))
                throw DataError("ingest: unexpected file " + class_dir.string() +
                                " (expected <subject>/<class>/ directories)");
            const std::string label_name = class_dir.filename().string();
            auto it = class_index.find(label_name);
            if (it == class_index.end())
                throw DataError("ingest: label '" + label_name + "' in " + class_dir.string() +
                                " is not in the declared class table");
            const auto samples = detail::sorted_children(class_dir);
            if (samples.empty())
                throw DataError("ingest: empty class directory " + class_dir.string());
            for (const fs::path& sample : samples) {
                ManifestEntry entry;
                entry.subject = subject;
                entry.label = it->second;
                if (fs::is_directory(sample)) {
                    if (kind_known && m.kind != SampleKind::Video)
                        throw DataError("ingest: mixed image and video samples under " + root);
                    m.kind = SampleKind::Video;
                    kind_known = true;
                    for (const fs::path& frame : detail::sorted_children(sample)) {
                        if (!detail::is_supported_image(frame))
                            throw DataError("ingest: unknown file type " + frame.string() +
                                            " (supported: .pgm, .ppm)");
                        entry.paths.push_back(frame.string());
                    }
                    if (entry.paths.empty())
                        throw DataError("ingest: frame directory " + sample.string() + " is empty");
                } else {
                    if (!detail::is_supported_image(sample))
                        throw DataError("ingest: unknown file type " + sample.string() +
                                        " (supported: .pgm, .ppm)");
                    if (kind_known && m.kind != SampleKind::Image)
                        throw DataError("ingest: mixed image and video samples under " + root);
                    m.kind = SampleKind::Image;
                    kind_known = true;
                    entry.paths.push_back(sample.string());
                }
                m.entries.push_back(std::move(entry));
            }
        }
    }
    if (m.entries.empty()) throw DataError("ingest: no samples found under " + root);
    return m;
}

/// Fully decoded dataset: every sample as a [C,H,W] tensor in [0,1].
struct Sample {
    std::string subject;
    int label = -1;
    Tensor input;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;
    int channels = 0, height = 0, width = 0;

    int num_classes() const { return static_cast<int>(class_names.size()); }
    std::size_t size() const { return samples.size(); }

    std::vector<std::string> subjects() const {
        std::vector<std::string> out;
        for (const auto& s : samples) out.push_back(s.subject);
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
        return out;
    }

    std::vector<int> all_indices() const {
        std::vector<int> idx(samples.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
        return idx;
    }
};

/// Decodes every manifest entry. Video samples are collapsed to rank-pooled
/// dynamic images and min-max normalized to [0,1]. All decoded samples must
/// share one H x W x channels shape.
inline Dataset load_dataset(const DatasetManifest& m) {
    Dataset ds;
    ds.class_names = m.classes;
    for (const auto& entry : m.entries) {
        Image img;
        if (m.kind == SampleKind::Image) {
            img = read_image(entry.paths.front());
        } else {
            FrameSequence seq;
            seq.subject = entry.subject;
            seq.label = entry.label;
            for (const auto& p : entry.paths) seq.frames.push_back(read_image(p));
            img = normalize_for_display(dynamic_image(seq));
        }
        if (ds.samples.empty()) {
            ds.channels = img.channels;
            ds.height = img.height;
            ds.width = img.width;
        } else if (img.channels != ds.channels || img.height != ds.height || img.width != ds.width) {
            throw DataError("load_dataset: sample " + entry.paths.front() + " has shape " +
                            std::to_string(img.height) + "x" + std::to_string(img.width) + "x" +
                            std::to_string(img.channels) + ", dataset uses " +
                            std::to_string(ds.height) + "x" + std::to_string(ds.width) + "x" +
                            std::to_string(ds.channels));
        }
        ds.samples.push_back({entry.subject, entry.label, image_to_tensor(img)});
    }
    return ds;
}

/// Stacks the chosen samples into a [B,C,H,W] batch plus labels.
inline std::pair<Tensor, std::vector<int>> make_batch(const Dataset& ds, const std::vector<int>& indices) {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const int B = static_cast<int>(indices.size());
    const std::size_t sample_len =
        static_cast<std::size_t>(ds.channels) * ds.height * ds.width;
    std::vector<double> data(static_cast<std::size_t>(B) * sample_len);
    std::vector<int> labels(indices.size());
    for (int b = 0; b < B; ++b) {
        const Sample& s = ds.samples.at(static_cast<std::size_t>(indices[static_cast<std::size_t>(b)]));
        std::copy(s.input.data().begin(), s.input.data().end(),
                  data.begin() + static_cast<std::size_t>(b) * sample_len);
        labels[static_cast<std::size_t>(b)] = s.label;
    }
    return {Tensor(Shape{B, ds.channels, ds.height, ds.width}, std::move(data)), labels};
}

/// Shuffled batches of indices, last batch possibly smaller.
inline std::vector<std::vector<int>> make_epoch_batches(std::vector<int> indices, int batch_size,
                                                        Rng& rng) {
    if (batch_size < 1) throw std::invalid_argument("make_epoch_batches: batch size must be >= 1");
    rng.shuffle(indices);
    std::vector<std::vector<int>> batches;
    for (std::size_t i = 0; i < indices.size(); i += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(indices.size(), i + static_cast<std::size_t>(batch_size));
        batches.emplace_back(indices.begin() + static_cast<std::ptrdiff_t>(i),
                             indices.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// ---------------------------------------------------------------------------
// Synthetic stripes dataset: class 0 = horizontal bands, class 1 = vertical
// bands. Subjects differ in stripe frequency, samples in phase and noise, so
// the class signal transfers across held-out subjects.
// ---------------------------------------------------------------------------

inline Dataset make_stripes_dataset(int n_samples, int hw, int n_subjects, std::uint64_t seed) {
    if (n_samples < 1 || hw < 4 || n_subjects < 1)
        throw std::invalid_argument("make_stripes_dataset: bad arguments");
    Rng rng(derive_seed(seed, "stripes"));
    Dataset ds;
    ds.class_names = {"horizontal", "vertical"};
    ds.channels = 1;
    ds.height = hw;
    ds.width = hw;
    for (int i = 0; i < n_samples; ++i) {
        const int subject_id = i % n_subjects;
        const int label = (i / n_subjects) % 2;
        const double cycles = 2.0 + subject_id % 3;
        const double phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        std::vector<double> pix(static_cast<std::size_t>(hw) * hw);
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                const int along = (label == 0) ? y : x;
                double v = 0.5 + 0.35 * std::sin(2.0 * 3.14159265358979323846 * cycles * along / hw + phase);
                v += rng.normal(0.0, 0.05);
                pix[static_cast<std::size_t>(y) * hw + x] = std::min(1.0, std::max(0.0, v));
            }
        char name[16];
        std::snprintf(name, sizeof(name), "s%02d", subject_id);
        ds.samples.push_back({name, label, Tensor(Shape{1, hw, hw}, std::move(pix))});
    }
    return ds;
}

/// Writes a dataset as a `root/<subject>/<class>/<sample>.pgm` tree (binary
/// PGM); the on-disk layout ingest() expects.
inline void write_dataset_pgm(const Dataset& ds, const std::string& root) {
    namespace fs = std::filesystem;
    if (ds.channels != 1) throw DataError("write_dataset_pgm: only single-channel datasets");
    std::map<std::string, int> counters;
    for (const Sample& s : ds.samples) {
        const std::string& cls = ds.class_names.at(static_cast<std::size_t>(s.label));
        fs::path dir = fs::path(root) / s.subject / cls;
        fs::create_directories(dir);
        char name[32];
        std::snprintf(name, sizeof(name), "%04d.pgm", counters[s.subject + "/" + cls]++);
        Image img(ds.height, ds.width, 1);
        const auto& d = s.input.data();
        std::copy(d.begin(), d.end(), img.pix.begin());
        write_image((dir / name).string(), img);
    }
}

} // namespace nascell
