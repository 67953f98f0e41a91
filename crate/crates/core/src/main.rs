use std::io;
use std::process::ExitCode;

use parrondo::cli;

fn main() -> ExitCode {
    if let Some(threads) = std::env::var(cli::THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if threads > 0 {
            // Fails only if the pool already exists, which cannot happen here.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
        }
    }
    let code = cli::run(std::env::args_os(), &mut io::stdout().lock(), &mut io::stderr().lock());
    ExitCode::from(code as u8)
}
