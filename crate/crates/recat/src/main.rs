fn main() {
    let mut stdout = std::io::stdout().lock();
    std::process::exit(recat::cli::dispatch(std::env::args_os(), &mut stdout));
}
