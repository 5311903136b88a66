fn main() {
    std::process::exit(layertracer::cli::run(std::env::args_os()));
}
