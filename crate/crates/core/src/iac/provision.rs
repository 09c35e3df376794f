//! Provider-specific provisioning and teardown scripts.
//!
//! Scripts are POSIX shell. The provider CLI binary can be swapped through
//! an environment variable (`STACKFORGE_OPENSTACK_CLI`, `STACKFORGE_AWS_CLI`,
//! `STACKFORGE_AZURE_CLI`) so a stub can stand in for the real tool.

use crate::model::{PlatformNode, Provider};

use super::NodeErrorKind;

pub(crate) fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn cli(provider: Provider) -> (&'static str, &'static str) {
    match provider {
        Provider::OpenStack => ("STACKFORGE_OPENSTACK_CLI", "openstack"),
        Provider::Amazon => ("STACKFORGE_AWS_CLI", "aws"),
        Provider::Azure => ("STACKFORGE_AZURE_CLI", "az"),
        Provider::PreDeployed => unreachable!("pre-deployed platforms have no provider CLI"),
    }
}

fn header(platform: &PlatformNode, action: &str) -> String {
    let (var, default) = cli(platform.provider);
    let mut s = String::new();
    s += "#!/bin/sh\n";
    s += &format!(
        "# {action} `{}`: {} {} {}, {} instance(s).\n",
        platform.id, platform.provider, platform.os_type, platform.os_version, platform.instance_count
    );
    s += "set -eu\n";
    s += &format!(": \"${{{var}:={default}}}\"\n");
    if let Some(env) = platform.attributes.get("env_file") {
        s += &format!(". {}\n", shell_quote(env));
    }
    s
}

fn command(var: &str, args: &[String]) -> String {
    let mut s = format!("\"${var}\"");
    for a in args {
        s += " \\\n    ";
        s += a;
    }
    s += "\n";
    s
}

/// The provisioning script for a cloud platform; `None` for pre-deployed hosts.
pub fn generate_provision(platform: &PlatformNode) -> Result<Option<String>, NodeErrorKind> {
    if platform.provider == Provider::PreDeployed {
        return Ok(None);
    }
    let required = |name: &str, v: &Option<String>| {
        v.clone().ok_or_else(|| NodeErrorKind::MissingAttribute(name.to_string()))
    };
    let image = required("image_name", &platform.image_name)?;
    let flavor = required("flavor", &platform.flavor)?;
    let q = |s: &str| shell_quote(s);
    let count = platform.instance_count.to_string();
    let name = &platform.id;

    let mut args: Vec<String> = Vec::new();
    match platform.provider {
        Provider::OpenStack => {
            args.extend(["server create".into(), format!("--image {}", q(&image)), format!("--flavor {}", q(&flavor))]);
            if let Some(n) = &platform.network {
                args.push(format!("--network {}", q(n)));
            }
            if let Some(sg) = &platform.security_group {
                args.push(format!("--security-group {}", q(sg)));
            }
            if let Some(k) = &platform.key_name {
                args.push(format!("--key-name {}", q(k)));
            }
            args.push(format!("--min {count} --max {count}"));
            args.push("--wait".into());
            args.push(q(name));
        }
        Provider::Amazon => {
            args.extend([
                "ec2 run-instances".into(),
                format!("--image-id {}", q(&image)),
                format!("--instance-type {}", q(&flavor)),
                format!("--count {count}"),
            ]);
            if let Some(n) = &platform.network {
                args.push(format!("--subnet-id {}", q(n)));
            }
            if let Some(sg) = &platform.security_group {
                args.push(format!("--security-groups {}", q(sg)));
            }
            if let Some(k) = &platform.key_name {
                args.push(format!("--key-name {}", q(k)));
            }
            args.push(format!(
                "--tag-specifications {}",
                q(&format!("ResourceType=instance,Tags=[{{Key=Name,Value={name}}}]"))
            ));
        }
        Provider::Azure => {
            args.extend([
                "vm create".into(),
                format!("--name {}", q(name)),
                format!("--image {}", q(&image)),
                format!("--size {}", q(&flavor)),
                format!("--count {count}"),
            ]);
            if let Some(n) = &platform.network {
                args.push(format!("--vnet-name {}", q(n)));
            }
            if let Some(sg) = &platform.security_group {
                args.push(format!("--nsg {}", q(sg)));
            }
            if let Some(k) = &platform.key_name {
                args.push(format!("--ssh-key-name {}", q(k)));
            }
        }
        Provider::PreDeployed => unreachable!(),
    }
    let (var, _) = cli(platform.provider);
    Ok(Some(header(platform, "provision") + &command(var, &args)))
}

/// Script terminating a platform's instances; `None` for pre-deployed hosts.
pub fn generate_teardown(platform: &PlatformNode) -> Option<String> {
    let q = |s: &str| shell_quote(s);
    let name = &platform.id;
    let args: Vec<String> = match platform.provider {
        Provider::PreDeployed => return None,
        Provider::OpenStack => vec!["server delete".into(), "--wait".into(), q(name)],
        Provider::Amazon => vec![
            "ec2 terminate-instances".into(),
            format!(
                "--instance-ids $(\"$STACKFORGE_AWS_CLI\" ec2 describe-instances --filters {} --query 'Reservations[].Instances[].InstanceId' --output text)",
                q(&format!("Name=tag:Name,Values={name}"))
            ),
        ],
        Provider::Azure => vec!["vm delete".into(), format!("--name {}", q(name)), "--yes".into()],
    };
    let (var, _) = cli(platform.provider);
    Some(header(platform, "terminate") + &command(var, &args))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::OsType;

    fn openstack() -> PlatformNode {
        let mut p = PlatformNode::new("openstack_vm", Provider::OpenStack, OsType::Ubuntu, "16.04");
        p.image_name = Some("ubuntu-16.04".into());
        p.flavor = Some("m1.small".into());
        p
    }

    #[test]
    fn openstack_script_carries_image_and_flavor() {
        let s = generate_provision(&openstack()).unwrap().unwrap();
        assert!(s.starts_with("#!/bin/sh\n"));
        assert!(s.contains("--image 'ubuntu-16.04'"));
        assert!(s.contains("--flavor 'm1.small'"));
        assert!(s.contains("--min 1 --max 1"));
        assert_eq!(generate_provision(&openstack()).unwrap().unwrap(), s);
    }

    #[test]
    fn predeployed_has_no_scripts() {
        let mut p = PlatformNode::new("hw", Provider::PreDeployed, OsType::Ubuntu, "16.04");
        p.address = Some("10.0.0.7".into());
        assert_eq!(generate_provision(&p).unwrap(), None);
        assert_eq!(generate_teardown(&p), None);
    }

    #[test]
    fn missing_flavor() {
        let mut p = openstack();
        p.flavor = None;
        assert_eq!(generate_provision(&p), Err(NodeErrorKind::MissingAttribute("flavor".into())));
    }

    #[test]
    fn quoting() {
        assert_eq!(shell_quote("it's"), r"'it'\''s'");
        let mut p = openstack();
        p.attributes.insert("env_file".into(), "./openrc.sh".into());
        p.instance_count = 3;
        let s = generate_provision(&p).unwrap().unwrap();
        assert!(s.contains(". './openrc.sh'\n"));
        assert!(s.contains("--min 3 --max 3"));
    }

    #[test]
    fn every_cloud_provider_has_both_scripts() {
        for provider in [Provider::OpenStack, Provider::Amazon, Provider::Azure] {
            let mut p = openstack();
            p.provider = provider;
            let (var, _) = cli(provider);
            assert!(generate_provision(&p).unwrap().unwrap().contains(var));
            assert!(generate_teardown(&p).unwrap().contains(var));
        }
    }
}
