use clap::Parser;
use siformer_cli::commands::{run, Cli};

/// Restore default SIGPIPE behavior so piping into `head` or `less`
/// terminates quietly instead of panicking on a closed stdout.
#[cfg(unix)]
fn reset_sigpipe() {
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
}

#[cfg(not(unix))]
fn reset_sigpipe() {}

fn main() {
    reset_sigpipe();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are not errors.
            if err.use_stderr() {
                err.print().expect("stderr");
                std::process::exit(1);
            }
            err.print().expect("stdout");
            std::process::exit(0);
        }
    };
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
