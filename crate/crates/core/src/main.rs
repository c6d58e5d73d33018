fn main() {
    std::process::exit(ddsynth::cli::run(std::env::args_os()));
}
