#include "brite/tagseq_io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace brite {

namespace {

constexpr char kMagic[4] = {'T', 'G', 'S', 'Q'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>((v >> 8) & 0xff),
                                static_cast<unsigned char>((v >> 16) & 0xff),
                                static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t take_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw FormatError("truncated container header: " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_plane(std::ostream& os, const std::vector<double>& vals) {
    std::vector<float> buf(vals.size());
    for (size_t i = 0; i < vals.size(); ++i) buf[i] = static_cast<float>(vals[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

std::vector<double> take_plane(std::istream& is, size_t n, const std::string& path) {
    std::vector<float> buf(n);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw FormatError("truncated container payload: " + path);
    std::vector<double> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = static_cast<double>(buf[i]);
    return out;
}

struct Header {
    uint32_t T, H, W;
    uint8_t planes;
};

void write_header(std::ostream& os, uint32_t T, uint32_t H, uint32_t W, uint8_t planes) {
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, T);
    put_u32(os, H);
    put_u32(os, W);
    os.put(static_cast<char>(planes));
}

Header read_header(std::istream& is, const std::string& path) {
    char magic[4];
    is.read(magic, 4);
    if (!is) throw FormatError("truncated container header: " + path);
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError("bad magic bytes (not a TGSQ container): " + path);
    }
    const uint32_t version = take_u32(is, path);
    if (version != kVersion) {
        throw FormatError("unsupported container version " + std::to_string(version) +
                          " (this build reads version " + std::to_string(kVersion) + "): " + path);
    }
    Header h;
    h.T = take_u32(is, path);
    h.H = take_u32(is, path);
    h.W = take_u32(is, path);
    const int p = is.get();
    if (p == std::char_traits<char>::eof()) {
        throw FormatError("truncated container header: " + path);
    }
    h.planes = static_cast<uint8_t>(p);
    if (h.T == 0 || h.H == 0 || h.W == 0 || h.planes == 0 || h.T > 1000000u || h.H > 65536u ||
        h.W > 65536u) {
        throw FormatError("implausible container dimensions: " + path);
    }
    return h;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    return os;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open for reading: " + path);
    return is;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open for writing: " + path);
    os << j.dump(2) << '\n';
}

json read_json(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open sidecar: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw FormatError("malformed sidecar " + path + ": " + e.what());
    }
    return j;
}

} // namespace

std::string sidecar_path(const std::string& path) {
    fs::path p(path);
    p.replace_extension();
    return p.string() + ".meta.json";
}

void save_displacement_series(const std::string& path, const std::vector<VectorField2D>& fields) {
    if (fields.empty()) throw InvalidInput("save_displacement_series: empty series");
    const int h = fields[0].h, w = fields[0].w;
    for (const VectorField2D& f : fields) {
        if (f.h != h || f.w != w) {
            throw ShapeError("save_displacement_series: inconsistent field shapes");
        }
    }
    std::ofstream os = open_out(path);
    write_header(os, static_cast<uint32_t>(fields.size()), static_cast<uint32_t>(h),
                 static_cast<uint32_t>(w), 2);
    for (const VectorField2D& f : fields) {
        put_plane(os, f.dx);
        put_plane(os, f.dy);
    }
    if (!os) throw FormatError("write failed: " + path);
}

std::vector<VectorField2D> load_displacement_series(const std::string& path) {
    std::ifstream is = open_in(path);
    const Header hd = read_header(is, path);
    if (hd.planes != 2) {
        throw FormatError("expected 2 planes per frame in displacement series: " + path);
    }
    const size_t n = static_cast<size_t>(hd.H) * hd.W;
    std::vector<VectorField2D> out;
    out.reserve(hd.T);
    for (uint32_t t = 0; t < hd.T; ++t) {
        VectorField2D f(static_cast<int>(hd.H), static_cast<int>(hd.W));
        f.dx = take_plane(is, n, path);
        f.dy = take_plane(is, n, path);
        out.push_back(std::move(f));
    }
    return out;
}

void save_scalar_image(const std::string& path, const ScalarField2D& image) {
    if (image.h <= 0 || image.w <= 0) throw InvalidInput("save_scalar_image: empty image");
    std::ofstream os = open_out(path);
    write_header(os, 1, static_cast<uint32_t>(image.h), static_cast<uint32_t>(image.w), 1);
    put_plane(os, image.data);
    if (!os) throw FormatError("write failed: " + path);
    write_json(sidecar_path(path), json{{"spacing_mm", {image.sx_mm, image.sy_mm}}});
}

ScalarField2D load_scalar_image(const std::string& path) {
    std::ifstream is = open_in(path);
    const Header hd = read_header(is, path);
    if (hd.T != 1 || hd.planes != 1) {
        throw FormatError("expected a single-plane raster (T=1): " + path);
    }
    ScalarField2D img(static_cast<int>(hd.H), static_cast<int>(hd.W));
    img.data = take_plane(is, img.size(), path);
    const std::string meta = sidecar_path(path);
    if (fs::exists(meta)) {
        const json j = read_json(meta);
        if (j.contains("spacing_mm")) {
            img.sx_mm = j["spacing_mm"][0].get<double>();
            img.sy_mm = j["spacing_mm"][1].get<double>();
        }
    }
    return img;
}

void save_sequence(const std::string& path, const TaggedSequence& seq) {
    seq.validate();
    const uint32_t T = static_cast<uint32_t>(seq.n_frames());
    const uint32_t H = static_cast<uint32_t>(seq.height());
    const uint32_t W = static_cast<uint32_t>(seq.width());
    {
        std::ofstream os = open_out(path);
        write_header(os, T, H, W, 2);
        for (uint32_t t = 0; t < T; ++t) {
            put_plane(os, seq.frames_h[t].data);
            put_plane(os, seq.frames_v[t].data);
        }
        if (!os) throw FormatError("write failed: " + path);
    }

    json meta;
    meta["spacing_mm"] = {seq.sx_mm, seq.sy_mm};
    meta["tag_period_mm"] = seq.tag_period_mm;
    meta["times_s"] = seq.times_s;
    meta["seed"] = seq.seed;
    meta["fading"] = {{"preset", seq.fading.preset},
                      {"tau_A", seq.fading.tau_A},
                      {"B_inf", seq.fading.B_inf},
                      {"tau_B", seq.fading.tau_B}};
    if (seq.has_truth) {
        const fs::path base(path);
        const std::string stem = base.stem().string();
        const std::string fwd_name = stem + ".gt_fwd.tagseq";
        const std::string inv_name = stem + ".gt_inv.tagseq";
        const std::string anat_name = stem + ".gt_anatomy.tagseq";
        const fs::path dir = base.parent_path();
        std::vector<VectorField2D> fwd, inv;
        fwd.reserve(seq.gt_motion.size());
        inv.reserve(seq.gt_motion.size());
        for (const Diffeo& d : seq.gt_motion) {
            fwd.push_back(d.forward);
            inv.push_back(d.inverse);
        }
        save_displacement_series((dir / fwd_name).string(), fwd);
        save_displacement_series((dir / inv_name).string(), inv);
        save_scalar_image((dir / anat_name).string(), seq.true_anatomy);
        meta["gt_motion_forward"] = fwd_name;
        meta["gt_motion_inverse"] = inv_name;
        meta["gt_anatomy"] = anat_name;
        meta["true_params"] = {{"A", seq.true_params.A},
                               {"B", seq.true_params.B},
                               {"mu", seq.true_params.mu},
                               {"phi_h", seq.true_params.phi_h},
                               {"phi_v", seq.true_params.phi_v}};
    }
    write_json(sidecar_path(path), meta);
}

TaggedSequence load_sequence(const std::string& path) {
    std::ifstream is = open_in(path);
    const Header hd = read_header(is, path);
    if (hd.planes != 2) throw FormatError("expected 2 tag orientations per frame: " + path);
    const std::string meta_path = sidecar_path(path);
    if (!fs::exists(meta_path)) {
        throw FormatError("missing sidecar for sequence: " + meta_path);
    }
    const json meta = read_json(meta_path);

    TaggedSequence seq;
    try {
        seq.sx_mm = meta.at("spacing_mm")[0].get<double>();
        seq.sy_mm = meta.at("spacing_mm")[1].get<double>();
        seq.tag_period_mm = meta.at("tag_period_mm").get<double>();
        seq.times_s = meta.at("times_s").get<std::vector<double>>();
        seq.seed = meta.at("seed").get<uint64_t>();
        const json& f = meta.at("fading");
        seq.fading.preset = f.at("preset").get<std::string>();
        seq.fading.tau_A = f.at("tau_A").get<double>();
        seq.fading.B_inf = f.at("B_inf").get<double>();
        seq.fading.tau_B = f.at("tau_B").get<double>();
    } catch (const json::exception& e) {
        throw FormatError("malformed sidecar " + meta_path + ": " + e.what());
    }
    if (seq.times_s.size() != hd.T) {
        throw FormatError("sidecar frame times do not match container frame count: " + meta_path);
    }

    const size_t n = static_cast<size_t>(hd.H) * hd.W;
    for (uint32_t t = 0; t < hd.T; ++t) {
        ScalarField2D fh(static_cast<int>(hd.H), static_cast<int>(hd.W), seq.sx_mm, seq.sy_mm);
        ScalarField2D fv = fh;
        fh.data = take_plane(is, n, path);
        fv.data = take_plane(is, n, path);
        seq.frames_h.push_back(std::move(fh));
        seq.frames_v.push_back(std::move(fv));
    }

    if (meta.contains("gt_motion_forward")) {
        const fs::path dir = fs::path(path).parent_path();
        const std::string fwd_path = (dir / meta["gt_motion_forward"].get<std::string>()).string();
        const std::string inv_path = (dir / meta["gt_motion_inverse"].get<std::string>()).string();
        const std::string anat_path = (dir / meta["gt_anatomy"].get<std::string>()).string();
        std::vector<VectorField2D> fwd = load_displacement_series(fwd_path);
        std::vector<VectorField2D> inv = load_displacement_series(inv_path);
        if (fwd.size() != hd.T || inv.size() != hd.T) {
            throw FormatError("ground-truth motion frame count mismatch: " + fwd_path);
        }
        seq.gt_motion.reserve(hd.T);
        for (uint32_t t = 0; t < hd.T; ++t) {
            seq.gt_motion.push_back(Diffeo{std::move(fwd[t]), std::move(inv[t]), 0});
        }
        seq.true_anatomy = load_scalar_image(anat_path);
        if (meta.contains("true_params")) {
            const json& p = meta["true_params"];
            seq.true_params.A = p.at("A").get<double>();
            seq.true_params.B = p.at("B").get<double>();
            seq.true_params.mu = p.at("mu").get<double>();
            seq.true_params.phi_h = p.at("phi_h").get<double>();
            seq.true_params.phi_v = p.at("phi_v").get<double>();
        }
        seq.has_truth = true;
    }
    seq.validate();
    return seq;
}

} // namespace brite
