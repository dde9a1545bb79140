#include "lungnas/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "lungnas/binary_io.hpp"

namespace lungnas {

namespace {

template <typename F>
void visit_params(NoduleParams& p, F&& f) {
    f("size", p.size);
    f("radius_min", p.radius_min);
    f("radius_max", p.radius_max);
    f("lobes_min", p.lobes_min);
    f("lobes_max", p.lobes_max);
    f("lobe_radius_min", p.lobe_radius_min);
    f("lobe_radius_max", p.lobe_radius_max);
    f("lobe_offset", p.lobe_offset);
    f("core_radius", p.core_radius);
    f("core_offset", p.core_offset);
    f("body_min", p.body_min);
    f("body_max", p.body_max);
    f("core_intensity", p.core_intensity);
    f("background", p.background);
    f("edge_sharpness", p.edge_sharpness);
    f("noise", p.noise);
    f("center_jitter", p.center_jitter);
}

std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::array<double, 3> random_direction(Rng& rng) {
    std::array<double, 3> d{};
    double n = 0.0;
    while (n < 1e-6) {
        for (auto& e : d) e = rng.normal();
        n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    }
    for (auto& e : d) e /= n;
    return d;
}

// Soft indicator of the ellipsoid interior, 1/2 on the surface.
double soft_inside(const Ellipsoid& e, double z, double y, double x, double sharpness) {
    const double dz = (z - e.center[0]) / e.radii[0];
    const double dy = (y - e.center[1]) / e.radii[1];
    const double dx = (x - e.center[2]) / e.radii[2];
    const double r = std::sqrt(dz * dz + dy * dy + dx * dx);
    return 1.0 / (1.0 + std::exp(-(1.0 - r) * sharpness));
}

}  // namespace

void NoduleParams::validate() const {
    auto need = [](bool ok, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("nodule parameters: ") + what);
    };
    need(size >= 8, "size must be at least 8");
    need(radius_min > 0.0 && radius_max >= radius_min, "benign radii must satisfy 0 < radius_min <= radius_max");
    need(lobe_radius_min > 0.0 && lobe_radius_max >= lobe_radius_min,
         "lobe radii must satisfy 0 < lobe_radius_min <= lobe_radius_max");
    need(core_radius > 0.0, "core_radius must be positive");
    need(lobes_min >= 1 && lobes_max >= lobes_min, "lobe count range is empty");
    need(lobe_offset >= 0.0 && core_offset >= 0.0, "offsets must be non-negative");
    need(body_min >= 0.0 && body_max >= body_min && body_max <= 1.0, "body intensity range must lie in [0, 1]");
    need(core_intensity >= 0.0 && core_intensity <= 1.0, "core_intensity must lie in [0, 1]");
    need(background >= 0.0 && background <= 1.0, "background must lie in [0, 1]");
    need(edge_sharpness > 0.0, "edge_sharpness must be positive");
    need(noise >= 0.0, "noise must be non-negative");
    need(center_jitter >= 0 && center_jitter * 4 < size, "center_jitter too large for the volume");
}

NoduleGeometry describe_nodule(std::uint64_t seed, NoduleClass cls, const NoduleParams& p) {
    p.validate();
    Rng rng = Rng(seed).split(cls == NoduleClass::Benign ? "benign" : "malignant");
    const double scale = p.size / 32.0;
    std::array<double, 3> c{};
    for (auto& e : c) {
        const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * p.center_jitter + 1))) - p.center_jitter;
        e = (p.size - 1) / 2.0 + j;
    }
    NoduleGeometry g;
    g.body = rng.uniform(p.body_min, p.body_max);
    if (cls == NoduleClass::Benign) {
        Ellipsoid e{c, {}};
        for (auto& r : e.radii) r = rng.uniform(p.radius_min, p.radius_max) * scale;
        g.lobes.push_back(e);
        return g;
    }
    const int lobes = p.lobes_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.lobes_max - p.lobes_min + 1)));
    for (int i = 0; i < lobes; ++i) {
        const auto d = random_direction(rng);
        const double dist = p.lobe_offset * scale * rng.uniform(0.6, 1.0);
        Ellipsoid e;
        for (int a = 0; a < 3; ++a) {
            e.center[a] = c[a] + d[a] * dist;
            e.radii[a] = rng.uniform(p.lobe_radius_min, p.lobe_radius_max) * scale;
        }
        g.lobes.push_back(e);
    }
    const auto d = random_direction(rng);
    Ellipsoid core;
    for (int a = 0; a < 3; ++a) {
        core.center[a] = c[a] + d[a] * p.core_offset * scale;
        core.radii[a] = p.core_radius * scale;
    }
    g.core = core;
    return g;
}

VolumeSample generate_nodule(std::uint64_t seed, NoduleClass cls, const NoduleParams& p) {
    const NoduleGeometry g = describe_nodule(seed, cls, p);
    Rng noise = Rng(seed).split("noise");
    VolumeSample s;
    const auto n = static_cast<std::uint32_t>(p.size);
    s.extents = {n, n, n};
    s.label = static_cast<int>(cls);
    s.seed = seed;
    s.voxels.resize(s.voxel_count());
    std::size_t i = 0;
    for (int z = 0; z < p.size; ++z)
        for (int y = 0; y < p.size; ++y)
            for (int x = 0; x < p.size; ++x, ++i) {
                double field = 0.0;
                for (const Ellipsoid& e : g.lobes) field = std::max(field, soft_inside(e, z, y, x, p.edge_sharpness));
                double v = p.background + (g.body - p.background) * field;
                if (g.core) {
                    const double core = soft_inside(*g.core, z, y, x, p.edge_sharpness);
                    v = std::max(v, p.background + (p.core_intensity - p.background) * core);
                }
                if (p.noise > 0.0) v += p.noise * noise.normal();
                s.voxels[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
    return s;
}

std::vector<char> encode_volume(const VolumeSample& sample) {
    if (sample.voxels.size() != sample.voxel_count()) throw std::invalid_argument("voxel count does not match extents");
    if (sample.label != 0 && sample.label != 1) throw std::invalid_argument("volume label must be 0 or 1");
    ByteWriter w;
    w.bytes(std::string_view(kVolumeTag, 4));
    for (auto e : sample.extents) w.u32(e);
    w.u8(static_cast<std::uint8_t>(sample.label));
    for (float v : sample.voxels) w.f32(v);
    return w.buffer();
}

VolumeSample decode_volume(std::span<const char> bytes, const std::array<std::uint32_t, 3>& expected,
                           const std::string& what) {
    ByteReader r(std::vector<char>(bytes.begin(), bytes.end()), what);
    if (r.remaining() < 4 || r.bytes(4) != std::string_view(kVolumeTag, 4))
        throw FormatError(what + ": bad magic (expected NLV1)");
    VolumeSample s;
    for (auto& e : s.extents) e = r.u32();
    if (s.extents != expected) {
        throw FormatError(what + ": extent mismatch (file " + std::to_string(s.extents[0]) + "x" +
                          std::to_string(s.extents[1]) + "x" + std::to_string(s.extents[2]) + ", expected " +
                          std::to_string(expected[0]) + "x" + std::to_string(expected[1]) + "x" +
                          std::to_string(expected[2]) + ")");
    }
    s.label = r.u8();
    if (s.label > 1) throw FormatError(what + ": label byte " + std::to_string(s.label) + " is not 0 or 1");
    r.need(s.voxel_count() * 4);
    s.voxels.resize(s.voxel_count());
    for (float& v : s.voxels) v = r.f32();
    if (r.remaining() != 0) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
    return s;
}

void write_volume(const VolumeSample& sample, const std::filesystem::path& path) {
    const auto bytes = encode_volume(sample);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

VolumeSample read_volume(const std::filesystem::path& path, const std::array<std::uint32_t, 3>& expected) {
    const auto bytes = read_file_bytes(path);
    VolumeSample s = decode_volume(bytes, expected, path.string());
    s.id = path.stem().string();
    return s;
}

std::string DatasetManifest::to_text() const {
    std::ostringstream out;
    out << "# lungnas dataset manifest\n";
    out << "version " << version << "\n";
    out << "root_seed " << root_seed << "\n";
    out << "folds " << folds << "\n";
    out << "fold_seed " << fold_seed << "\n";
    NoduleParams p = params;
    visit_params(p, [&](const char* name, auto& v) { out << "param " << name << " " << format_number(v) << "\n"; });
    out << "# sample <id> <path> <label> <seed> <fold>\n";
    for (const auto& e : entries)
        out << "sample " << e.id << " " << e.path << " " << e.label << " " << e.seed << " " << e.fold << "\n";
    return out.str();
}

DatasetManifest DatasetManifest::from_text(const std::string& text) {
    DatasetManifest m;
    m.version.clear();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& why) { throw FormatError("manifest line " + std::to_string(lineno) + ": " + why); };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        bool ok = true;
        if (key == "version") {
            ok = static_cast<bool>(ls >> m.version);
            if (ok && m.version != "NLM1") fail("unsupported version " + m.version);
        } else if (key == "root_seed") {
            ok = static_cast<bool>(ls >> m.root_seed);
        } else if (key == "folds") {
            ok = static_cast<bool>(ls >> m.folds);
        } else if (key == "fold_seed") {
            ok = static_cast<bool>(ls >> m.fold_seed);
        } else if (key == "param") {
            std::string name;
            double value = 0.0;
            ok = static_cast<bool>(ls >> name >> value);
            bool known = false;
            visit_params(m.params, [&](const char* n, auto& field) {
                if (name == n) {
                    field = static_cast<std::remove_reference_t<decltype(field)>>(value);
                    known = true;
                }
            });
            if (ok && !known) fail("unknown parameter " + name);
        } else if (key == "sample") {
            ManifestEntry e;
            ok = static_cast<bool>(ls >> e.id >> e.path >> e.label >> e.seed >> e.fold);
            if (ok && e.label != 0 && e.label != 1) fail("label must be 0 or 1");
            m.entries.push_back(std::move(e));
        } else {
            fail("unknown key " + key);
        }
        std::string extra;
        if (!ok) fail("malformed " + key + " line");
        if (ls >> extra) fail("unexpected token " + extra);
    }
    if (m.version.empty()) throw FormatError("manifest: missing version line");
    std::vector<std::string> ids;
    for (const auto& e : m.entries) ids.push_back(e.id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw FormatError("manifest: duplicate sample id");
    for (const auto& e : m.entries)
        if (e.fold < -1 || e.fold >= m.folds)
            throw FormatError("manifest: sample " + e.id + " has fold " + std::to_string(e.fold));
    return m;
}

void DatasetManifest::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    out << to_text();
    if (!out) throw std::runtime_error("cannot write " + path.string());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::vector<std::size_t> DatasetManifest::indices_in_folds(std::span<const int> fs) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (std::find(fs.begin(), fs.end(), entries[i].fold) != fs.end()) out.push_back(i);
    return out;
}

std::vector<std::size_t> DatasetManifest::indices_outside_folds(std::span<const int> fs) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < entries.size(); ++i)
        if (std::find(fs.begin(), fs.end(), entries[i].fold) == fs.end()) out.push_back(i);
    return out;
}

DatasetManifest make_folds(DatasetManifest m, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("make_folds needs k >= 2");
    if (m.entries.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("make_folds: " + std::to_string(m.entries.size()) + " samples is fewer than k = " +
                                    std::to_string(k));
    const Rng root(seed);
    std::size_t start = 0;
    for (int label : {0, 1}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < m.entries.size(); ++i)
            if (m.entries[i].label == label) idx.push_back(i);
        Rng rng = root.split(static_cast<std::uint64_t>(label));
        rng.shuffle(idx.begin(), idx.end());
        for (std::size_t p = 0; p < idx.size(); ++p)
            m.entries[idx[p]].fold = static_cast<int>((start + p) % static_cast<std::size_t>(k));
        start = (start + idx.size()) % static_cast<std::size_t>(k);
    }
    m.folds = k;
    m.fold_seed = seed;
    return m;
}

DatasetManifest generate_dataset(const std::filesystem::path& dir, int n, std::uint64_t seed, const NoduleParams& params,
                                 int folds) {
    if (n < 1) throw std::invalid_argument("dataset size must be positive");
    params.validate();
    DatasetManifest m;
    m.params = params;
    m.root_seed = seed;
    const Rng root(seed);
    const Rng samples = root.split("samples");
    for (int i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "n%04d", i);
        ManifestEntry e;
        e.id = id;
        e.path = std::string("volumes/") + id + ".nlv";
        e.label = i % 2;
        e.seed = samples.split(static_cast<std::uint64_t>(i)).seed();
        VolumeSample s = generate_nodule(e.seed, static_cast<NoduleClass>(e.label), params);
        write_volume(s, dir / e.path);
        m.entries.push_back(std::move(e));
    }
    if (folds > 0) m = make_folds(std::move(m), folds, root.split("folds").seed());
    m.save(dir / "manifest");
    return m;
}

std::vector<VolumeSample> load_samples(const DatasetManifest& m, const std::filesystem::path& dir) {
    const auto n = static_cast<std::uint32_t>(m.params.size);
    std::vector<VolumeSample> out;
    out.reserve(m.entries.size());
    for (const auto& e : m.entries) {
        VolumeSample s = read_volume(dir / e.path, {n, n, n});
        if (s.label != e.label) throw FormatError(e.path + ": label disagrees with the manifest");
        s.id = e.id;
        s.seed = e.seed;
        out.push_back(std::move(s));
    }
    return out;
}

AugmentPlan draw_augment(Rng& rng) {
    AugmentPlan plan;
    for (auto& o : plan.offset) o = static_cast<int>(rng.below(2 * kAugmentPad + 1));
    for (auto&& f : plan.flip) f = rng.coin();
    return plan;
}

Tensor apply_augment(const VolumeSample& s, const AugmentPlan& plan) {
    const Index d = s.extents[0], h = s.extents[1], w = s.extents[2];
    for (int o : plan.offset)
        if (o < 0 || o > 2 * kAugmentPad) throw std::invalid_argument("crop offset outside the padded volume");
    Tensor out({d, h, w});
    Vector& v = out.data();
    for (Index z = 0; z < d; ++z) {
        const Index sz = z + plan.offset[0] - kAugmentPad;
        const Index tz = plan.flip[0] ? d - 1 - z : z;
        for (Index y = 0; y < h; ++y) {
            const Index sy = y + plan.offset[1] - kAugmentPad;
            const Index ty = plan.flip[1] ? h - 1 - y : y;
            for (Index x = 0; x < w; ++x) {
                const Index sx = x + plan.offset[2] - kAugmentPad;
                const Index tx = plan.flip[2] ? w - 1 - x : x;
                const bool inside = sz >= 0 && sz < d && sy >= 0 && sy < h && sx >= 0 && sx < w;
                v[(tz * h + ty) * w + tx] = inside ? s.voxels[static_cast<std::size_t>((sz * h + sy) * w + sx)] : 0.0;
            }
        }
    }
    return out;
}

Tensor augment(const VolumeSample& sample, Rng& rng) { return apply_augment(sample, draw_augment(rng)); }

Tensor volume_tensor(const VolumeSample& s) {
    Tensor out({Index{s.extents[0]}, Index{s.extents[1]}, Index{s.extents[2]}});
    for (std::size_t i = 0; i < s.voxels.size(); ++i) out[static_cast<Index>(i)] = s.voxels[i];
    return out;
}

Tensor stack_volumes(std::span<const VolumeSample* const> samples) {
    if (samples.empty()) throw std::invalid_argument("cannot stack an empty batch");
    const auto& e = samples[0]->extents;
    Tensor out({static_cast<Index>(samples.size()), 1, Index{e[0]}, Index{e[1]}, Index{e[2]}});
    const auto n = static_cast<Index>(samples[0]->voxel_count());
    for (std::size_t b = 0; b < samples.size(); ++b) {
        if (samples[b]->extents != e) throw ShapeError("stack_volumes: mixed extents");
        for (Index i = 0; i < n; ++i) out[static_cast<Index>(b) * n + i] = samples[b]->voxels[static_cast<std::size_t>(i)];
    }
    return out;
}

}  // namespace lungnas
