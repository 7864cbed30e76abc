#include "cwm/net.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "cwm/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cwm {

std::string kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv: return "conv";
        case LayerKind::Relu: return "relu";
        case LayerKind::MaxPool: return "maxpool";
        case LayerKind::Upsample: return "upsample";
        case LayerKind::ResidualAdd: return "residual_add";
    }
    throw std::logic_error("unknown layer kind");
}

LayerKind kind_from_name(const std::string& s) {
    if (s == "conv") return LayerKind::Conv;
    if (s == "cwm_conv") return LayerKind::Conv;  // accepted alias
    if (s == "relu") return LayerKind::Relu;
    if (s == "maxpool") return LayerKind::MaxPool;
    if (s == "upsample") return LayerKind::Upsample;
    if (s == "residual_add") return LayerKind::ResidualAdd;
    throw std::invalid_argument("unknown layer kind '" + s + "'");
}

namespace {

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_') return false;
    return true;
}

int find_layer(const std::vector<LayerSpec>& layers, const std::string& name, size_t before) {
    for (size_t i = 0; i < before; ++i)
        if (layers[i].name == name) return static_cast<int>(i);
    return -1;
}

}  // namespace

std::vector<int> NetworkSpec::resolve_inputs() const {
    std::vector<int> idx(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        if (l.input.empty()) {
            idx[i] = static_cast<int>(i) - 1;  // -1 = frame
        } else {
            int j = find_layer(layers, l.input, i);
            if (j < 0)
                throw std::invalid_argument("network: layer '" + l.name + "' reads unknown or later layer '" +
                                            l.input + "'");
            idx[i] = j;
        }
    }
    return idx;
}

std::vector<int> NetworkSpec::resolve_skips() const {
    std::vector<int> idx(layers.size(), -2);
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        if (l.kind != LayerKind::ResidualAdd) continue;
        int j = find_layer(layers, l.skip_input, i);
        if (j < 0)
            throw std::invalid_argument("network: residual '" + l.name + "' adds unknown or later layer '" +
                                        l.skip_input + "'");
        idx[i] = j;
    }
    return idx;
}

void NetworkSpec::validate() const {
    if (layers.empty()) throw std::invalid_argument("network: no layers");
    if (in_channels < 1) throw std::invalid_argument("network: in_channels must be >= 1");
    if (num_classes < 2) throw std::invalid_argument("network: num_classes must be >= 2");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("network: alpha must be in (0,1]");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("network: rho must be in [0,1]");
    std::set<std::string> names;
    for (const LayerSpec& l : layers) {
        if (!valid_name(l.name))
            throw std::invalid_argument("network: layer name '" + l.name + "' must be [A-Za-z0-9_]+");
        if (!names.insert(l.name).second)
            throw std::invalid_argument("network: duplicate layer name '" + l.name + "'");
    }
    std::vector<int> inputs = resolve_inputs();
    std::vector<int> skips = resolve_skips();

    // channel bookkeeping along every path
    std::vector<int> channels(layers.size());
    for (size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        int in_ch = inputs[i] < 0 ? in_channels : channels[static_cast<size_t>(inputs[i])];
        switch (l.kind) {
            case LayerKind::Conv:
                if (l.in_channels != in_ch)
                    throw std::invalid_argument("network: conv '" + l.name + "' expects " +
                                                std::to_string(l.in_channels) + " input channels, gets " +
                                                std::to_string(in_ch));
                if (l.out_channels < 1 || l.kernel < 1)
                    throw std::invalid_argument("network: conv '" + l.name + "' has empty shape");
                if (l.stride != 1 && l.stride != 2)
                    throw std::invalid_argument("network: conv '" + l.name + "' stride must be 1 or 2");
                if (l.padding < 0)
                    throw std::invalid_argument("network: conv '" + l.name + "' has negative padding");
                channels[i] = l.out_channels;
                break;
            case LayerKind::ResidualAdd: {
                int skip_ch = channels[static_cast<size_t>(skips[i])];
                if (in_ch != skip_ch)
                    throw std::invalid_argument("network: residual '" + l.name + "' adds " +
                                                std::to_string(in_ch) + " and " + std::to_string(skip_ch) +
                                                " channels");
                channels[i] = in_ch;
                break;
            }
            default:
                if (l.cwm_eligible)
                    throw std::invalid_argument("network: only convs can be streamed ('" + l.name + "')");
                channels[i] = in_ch;
                break;
        }
    }
    if (channels.back() != num_classes)
        throw std::invalid_argument("network: final layer yields " + std::to_string(channels.back()) +
                                    " channels, expected num_classes = " + std::to_string(num_classes));
}

std::vector<const LayerSpec*> NetworkSpec::conv_layers() const {
    std::vector<const LayerSpec*> out;
    for (const LayerSpec& l : layers)
        if (l.kind == LayerKind::Conv) out.push_back(&l);
    return out;
}

NetworkSpec toynet_spec(int num_classes, int base_width, double alpha, double rho,
                        const ToynetOptions& opts) {
    if (base_width < 8) throw std::invalid_argument("toynet: base_width must be >= 8");
    if (num_classes < 2) throw std::invalid_argument("toynet: num_classes must be >= 2");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("toynet: alpha must be in (0,1]");
    if (rho < 0.0 || rho > 1.0) throw std::invalid_argument("toynet: rho must be in [0,1]");

    const int w = base_width;
    NetworkSpec spec;
    spec.name = "toynet";
    spec.in_channels = 3;
    spec.num_classes = num_classes;
    spec.base_width = base_width;
    spec.alpha = 1.0;
    spec.rho = rho;

    auto conv = [&](const std::string& name, int in, int out, int k, int pad, bool cwm,
                    const std::string& input = "") {
        LayerSpec l;
        l.name = name;
        l.kind = LayerKind::Conv;
        l.input = input;
        l.in_channels = in;
        l.out_channels = out;
        l.kernel = k;
        l.stride = 1;
        l.padding = pad;
        l.cwm_eligible = cwm;
        spec.layers.push_back(l);
    };
    auto simple = [&](const std::string& name, LayerKind kind) {
        LayerSpec l;
        l.name = name;
        l.kind = kind;
        spec.layers.push_back(l);
    };
    auto res_add = [&](const std::string& name, const std::string& input, const std::string& skip) {
        LayerSpec l;
        l.name = name;
        l.kind = LayerKind::ResidualAdd;
        l.input = input;
        l.skip_input = skip;
        spec.layers.push_back(l);
    };

    conv("stem", 3, w, 3, 1, opts.cwm_stem);
    simple("stem_relu", LayerKind::Relu);
    conv("b1c1", w, w, 3, 1, true);
    simple("b1r1", LayerKind::Relu);
    conv("b1c2", w, w, 3, 1, true);
    res_add("b1add", "", "stem_relu");
    simple("b1r2", LayerKind::Relu);
    conv("b2c1", w, w, 3, 1, true);
    simple("b2r1", LayerKind::Relu);
    conv("b2c2", w, w, 3, 1, true);
    res_add("b2add", "", "b1r2");
    simple("b2r2", LayerKind::Relu);
    simple("pool", LayerKind::MaxPool);
    conv("b3c1", w, 2 * w, 3, 1, true);
    simple("b3r1", LayerKind::Relu);
    conv("b3c2", 2 * w, 2 * w, 3, 1, true);
    conv("b3proj", w, 2 * w, 1, 0, opts.cwm_skip, "pool");
    res_add("b3add", "b3c2", "b3proj");
    simple("b3r2", LayerKind::Relu);
    conv("b4c1", 2 * w, 2 * w, 3, 1, true);
    simple("b4r1", LayerKind::Relu);
    conv("b4c2", 2 * w, 2 * w, 3, 1, true);
    res_add("b4add", "", "b3r2");
    simple("b4r2", LayerKind::Relu);
    simple("up", LayerKind::Upsample);
    conv("fuse", 2 * w, w, 3, 1, true);
    simple("fuse_relu", LayerKind::Relu);
    conv("head", w, num_classes, 1, 0, false);

    NetworkSpec out = alpha == 1.0 ? spec : slim(spec, alpha);
    out.validate();
    return out;
}

NetworkSpec slim(const NetworkSpec& spec, double alpha) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("slim: alpha must be in (0,1]");
    spec.validate();
    if (alpha == 1.0) return spec;

    NetworkSpec out = spec;
    out.alpha = spec.alpha * alpha;
    std::vector<int> inputs = spec.resolve_inputs();

    // last conv is the classifier head; its output width is preserved
    int head = -1;
    for (size_t i = 0; i < out.layers.size(); ++i)
        if (out.layers[i].kind == LayerKind::Conv) head = static_cast<int>(i);

    std::vector<int> channels(out.layers.size());
    for (size_t i = 0; i < out.layers.size(); ++i) {
        LayerSpec& l = out.layers[i];
        int in_ch = inputs[i] < 0 ? out.in_channels : channels[static_cast<size_t>(inputs[i])];
        if (l.kind == LayerKind::Conv) {
            l.in_channels = in_ch;
            if (static_cast<int>(i) != head)
                l.out_channels = std::max<int>(1, static_cast<int>(std::lround(alpha * l.out_channels)));
            channels[i] = l.out_channels;
        } else {
            channels[i] = in_ch;
        }
    }
    out.validate();
    return out;
}

int64_t param_count(const NetworkSpec& spec) {
    int64_t n = 0;
    for (const LayerSpec* l : spec.conv_layers())
        n += static_cast<int64_t>(l->out_channels) * l->in_channels * l->kernel * l->kernel +
             l->out_channels;
    return n;
}

std::string spec_to_json(const NetworkSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["in_channels"] = spec.in_channels;
    j["num_classes"] = spec.num_classes;
    j["base_width"] = spec.base_width;
    j["alpha"] = spec.alpha;
    j["rho"] = spec.rho;
    j["layers"] = json::array();
    for (const LayerSpec& l : spec.layers) {
        json jl;
        jl["name"] = l.name;
        jl["kind"] = kind_name(l.kind);
        if (!l.input.empty()) jl["input"] = l.input;
        if (l.kind == LayerKind::ResidualAdd) jl["skip"] = l.skip_input;
        if (l.kind == LayerKind::Conv) {
            jl["in"] = l.in_channels;
            jl["out"] = l.out_channels;
            jl["k"] = l.kernel;
            jl["stride"] = l.stride;
            jl["pad"] = l.padding;
            jl["cwm"] = l.cwm_eligible;
        }
        j["layers"].push_back(jl);
    }
    return j.dump(2);
}

NetworkSpec spec_from_json(const std::string& text) {
    json j = json::parse(text);
    NetworkSpec spec;
    spec.name = j.value("name", "net");
    spec.in_channels = j.at("in_channels").get<int>();
    spec.num_classes = j.at("num_classes").get<int>();
    spec.base_width = j.value("base_width", 0);
    spec.alpha = j.value("alpha", 1.0);
    spec.rho = j.value("rho", 0.0);
    for (const json& jl : j.at("layers")) {
        LayerSpec l;
        l.name = jl.at("name").get<std::string>();
        l.kind = kind_from_name(jl.at("kind").get<std::string>());
        l.input = jl.value("input", "");
        l.skip_input = jl.value("skip", "");
        if (l.kind == LayerKind::Conv) {
            l.in_channels = jl.at("in").get<int>();
            l.out_channels = jl.at("out").get<int>();
            l.kernel = jl.at("k").get<int>();
            l.stride = jl.value("stride", 1);
            l.padding = jl.value("pad", 0);
            l.cwm_eligible = jl.value("cwm", false);
        }
        spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
}

void save_spec(const NetworkSpec& spec, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << spec_to_json(spec) << "\n";
}

NetworkSpec load_spec(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return spec_from_json(text);
}

template <typename T>
void save_weights(const Network<T>& net, const std::string& dir) {
    fs::create_directories(dir);
    json manifest;
    manifest["format"] = "cwm-weights";
    manifest["version"] = 1;
    manifest["dtype"] = dtype_of<T>::value == Dtype::f32 ? "fp32" : "fp64";
    manifest["spec"] = json::parse(spec_to_json(net.spec));
    manifest["tensors"] = json::array();
    for (const LayerSpec* l : net.spec.conv_layers()) {
        const ConvParams<T>& p = net.params.at(l->name);
        std::string kfile = l->name + ".kernel.cwmt";
        std::string bfile = l->name + ".bias.cwmt";
        save_tensor(dir + "/" + kfile, p.kernel);
        save_tensor(dir + "/" + bfile, p.bias);
        manifest["tensors"].push_back({{"layer", l->name}, {"kernel", kfile}, {"bias", bfile}});
    }
    std::ofstream os(dir + "/manifest.json");
    if (!os) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    os << manifest.dump(2) << "\n";
}

template <typename T>
Network<T> load_weights(const std::string& dir, const NetworkSpec* expected) {
    std::ifstream is(dir + "/manifest.json");
    if (!is) throw std::runtime_error("cannot read " + dir + "/manifest.json");
    json manifest = json::parse(is);
    if (manifest.value("format", "") != "cwm-weights")
        throw std::runtime_error("weights: " + dir + " is not a weights directory");
    const std::string want_dtype = dtype_of<T>::value == Dtype::f32 ? "fp32" : "fp64";
    if (manifest.value("dtype", "") != want_dtype)
        throw std::runtime_error("weights: dtype mismatch in " + dir);

    NetworkSpec spec = spec_from_json(manifest.at("spec").dump());
    const NetworkSpec& check = expected ? *expected : spec;
    check.validate();

    Network<T> net;
    net.spec = check;
    net.input_idx = check.resolve_inputs();
    net.skip_idx = check.resolve_skips();

    std::map<std::string, std::pair<std::string, std::string>> files;
    for (const json& t : manifest.at("tensors"))
        files[t.at("layer").get<std::string>()] = {t.at("kernel").get<std::string>(),
                                                   t.at("bias").get<std::string>()};

    for (const LayerSpec* l : check.conv_layers()) {
        auto it = files.find(l->name);
        if (it == files.end())
            throw std::runtime_error("weights: layer '" + l->name + "' missing from manifest");
        Tensor<T> kernel = load_tensor<T>(dir + "/" + it->second.first);
        Tensor<T> bias = load_tensor<T>(dir + "/" + it->second.second);
        const std::vector<int> want{l->out_channels, l->in_channels, l->kernel, l->kernel};
        if (kernel.shape() != want)
            throw std::runtime_error("weights: layer '" + l->name + "' kernel is " +
                                     shape_str(kernel.shape()) + ", spec wants " + shape_str(want));
        if (bias.ndim() != 1 || bias.dim(0) != l->out_channels)
            throw std::runtime_error("weights: layer '" + l->name + "' bias is " +
                                     shape_str(bias.shape()));
        net.params.emplace(l->name, ConvParams<T>{std::move(kernel), std::move(bias)});
        if (l->cwm_eligible)
            net.schedules.emplace(l->name, bistep_generator(l->out_channels, check.rho));
    }
    return net;
}

template void save_weights<float>(const Network<float>&, const std::string&);
template void save_weights<double>(const Network<double>&, const std::string&);
template Network<float> load_weights<float>(const std::string&, const NetworkSpec*);
template Network<double> load_weights<double>(const std::string&, const NetworkSpec*);

}  // namespace cwm
